"""Graph layers over motion nodes, the adaptive adjacency update and the head.

The full model runs pairing -> encoding -> initial adjacency ->
``layers`` x (adaptive update, graph convolution) -> attention head. Three
ablations reuse the same parameters:

* ``no_gcn``    classify the motion features directly
* ``no_motion`` encode raw frames 2..L instead of onset differences
* ``no_atm``    keep the initial adjacency at every layer
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .errors import ConfigError, InputError, ShapeError
from .graph import AdjacencyStack, assemble_adjacency, build_topology
from .motion import EncoderConfig, FrameSequence, encode_batch, init_encoder
from .numerics import Tensor

VARIANTS = ("full", "no_gcn", "no_motion", "no_atm")

PRESETS = {
    "small": {"blocks": 2, "layers": 2, "window": 1},
    "large": {"blocks": 4, "layers": 4, "window": 2},
}


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    clip_length: int = 16
    channels: int = 1
    height: int = 32
    width: int = 32
    patch: int = 8
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 2
    layers: int = 2
    window: int = 1
    tau: float = 10.0
    lam_local: float = 1.0
    lam_global: float = 2.0
    forget: tuple[float, ...] = (0.5,)
    residual: bool = True
    fc_noise: float = 1e-3

    def __post_init__(self):
        forget = self.forget
        if np.isscalar(forget):
            forget = (float(forget),)
        forget = tuple(float(f) for f in forget)
        if len(forget) == 1:
            forget = forget * self.layers
        object.__setattr__(self, "forget", forget)
        if len(forget) != self.layers:
            raise ConfigError(f"forget needs {self.layers} rates, got {len(forget)}")
        if any(not 0.0 <= f <= 1.0 for f in forget):
            raise ConfigError(f"forget rates must lie in [0, 1], got {forget}")
        if self.clip_length < 3:
            raise ConfigError(f"clip_length must be >= 3, got {self.clip_length}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not self.lam_local < self.lam_global:
            raise ConfigError("lam_local must be smaller than lam_global")
        self.encoder  # validates patch/heads divisibility

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            channels=self.channels,
            height=self.height,
            width=self.width,
            patch=self.patch,
            dim=self.dim,
            heads=self.heads,
            blocks=self.blocks,
            mlp_ratio=self.mlp_ratio,
        )

    @property
    def num_nodes(self) -> int:
        return self.clip_length - 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["forget"] = list(self.forget)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        data = dict(data)
        if "forget" in data and not np.isscalar(data["forget"]):
            data["forget"] = tuple(data["forget"])
        return cls(**data)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """All trainable tensors, keyed by dotted names in a fixed order."""
    params = init_encoder(config.encoder, rng)
    d, n, c = config.dim, config.num_nodes, config.num_classes
    raw: dict[str, np.ndarray] = {}
    for layer in range(config.layers):
        raw[f"gcn.layer{layer}.w"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        raw[f"gcn.layer{layer}.b"] = np.zeros(d)
        # near-identity so early layers see roughly the initial adjacency
        raw[f"atm.layer{layer}.w"] = np.eye(n) + rng.normal(0.0, config.fc_noise, size=(n, n))
        raw[f"atm.layer{layer}.b"] = np.zeros(n)
    for name in ("wq", "wk", "wv"):
        raw[f"head.{name}"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
    raw["head.w"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, c))
    raw["head.b"] = np.zeros(c)
    params.update({k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()})
    return params


def tm_gcn_layer(H, A, weight, bias, residual: bool = True) -> Tensor:
    """ReLU(colnorm(A)^T H W + b), plus H when shapes allow.

    Columns of ``A`` collect incoming edges; each is divided by its sum, and
    an all-zero column is left as zeros.
    """
    H, A = nx.as_tensor(H), nx.as_tensor(A)
    if H.shape[-1] != weight.shape[0]:
        raise ConfigError(f"tm_gcn_layer: features of width {H.shape[-1]} vs weight {weight.shape}")
    if A.shape[-1] != A.shape[-2] or A.shape[-1] != H.shape[-2]:
        raise ShapeError(f"tm_gcn_layer: adjacency {A.shape} does not match features {H.shape}")
    colsum = A.sum(axis=-2, keepdims=True)
    normed = A / (colsum + Tensor((colsum.data == 0).astype(np.float64)))
    out = nx.relu(nx.transpose(normed) @ H @ weight + bias)
    if residual and out.shape == H.shape:
        out = out + H
    return out


def adaptive_tm(A_prev, A_0, forget: float, weight, bias, mask: np.ndarray) -> Tensor:
    """mask * (FC(A_prev) * (1 - f) + A_0 * f), FC acting on each row."""
    A_prev, A_0 = nx.as_tensor(A_prev), nx.as_tensor(A_0)
    n = weight.shape[0]
    for name, m in (("A_prev", A_prev), ("A_0", A_0)):
        if m.shape[-2:] != (n, n):
            raise ConfigError(f"adaptive_tm: {name} has shape {m.shape}, configured N={n}")
    if not 0.0 <= forget <= 1.0:
        raise ConfigError(f"forget rate must lie in [0, 1], got {forget}")
    transformed = A_prev @ weight + bias
    blended = transformed * (1.0 - forget) + A_0 * forget
    return blended * Tensor(mask)


@dataclass
class Prediction:
    probabilities: np.ndarray
    predicted: int
    attention: dict = field(default_factory=dict)


def classify(H_last, params, prefix: str = "head") -> tuple[Tensor, np.ndarray]:
    """Self-attention over nodes, mean-pool, linear map, softmax.

    Works on (N, d) or (B, N, d); returns probabilities and the attention
    weights as an array.
    """
    H = nx.as_tensor(H_last)
    single = H.ndim == 2
    if single:
        H = nx.reshape(H, (1,) + H.shape)
    d = H.shape[-1]
    q = H @ params[f"{prefix}.wq"]
    k = H @ params[f"{prefix}.wk"]
    v = H @ params[f"{prefix}.wv"]
    attn = nx.softmax((q @ nx.transpose(k)) * (1.0 / np.sqrt(d)))
    pooled = nx.mean(attn @ v, axis=-2)
    probs = nx.softmax(pooled @ params[f"{prefix}.w"] + params[f"{prefix}.b"])
    if single:
        return nx.reshape(probs, probs.shape[1:]), attn.data[0]
    return probs, attn.data


def forward_batch(
    frames: np.ndarray,
    apex_indices,
    params,
    config: ModelConfig,
    variant: str = "full",
) -> tuple[Tensor, dict]:
    """Class probabilities (B, c) for a batch of equal-length clips (B, L, C, H, W)."""
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    frames = np.asarray(frames, dtype=np.float64)
    b, length = frames.shape[:2]
    if length != config.clip_length:
        raise ConfigError(f"clips must have length {config.clip_length}, got {length}")
    n = length - 1
    if variant == "no_motion":
        inputs = frames[:, 1:]
    else:
        inputs = frames[:, 1:] - frames[:, :1]
    pair_idx = np.tile(np.arange(2, length + 1), b)
    feats, enc_maps = encode_batch(
        inputs.reshape((b * n,) + frames.shape[2:]), pair_idx, params, config.encoder
    )
    H = nx.reshape(feats, (b, n, config.dim))
    info: dict = {"encoder_attention": [m.reshape((b, n) + m.shape[1:]) for m in enc_maps]}

    if variant != "no_gcn":
        topologies = [build_topology(length, int(a), config.window) for a in apex_indices]
        stack = assemble_adjacency(
            H, topologies, config.tau, config.lam_local, config.lam_global
        )
        A = stack.initial
        for layer in range(config.layers):
            if variant != "no_atm":
                A = adaptive_tm(
                    A,
                    stack.initial,
                    config.forget[layer],
                    params[f"atm.layer{layer}.w"],
                    params[f"atm.layer{layer}.b"],
                    stack.mask,
                )
            stack.layers.append(A)
            H = tm_gcn_layer(
                H, A, params[f"gcn.layer{layer}.w"], params[f"gcn.layer{layer}.b"], config.residual
            )
        info["adjacency"] = stack
    probs, head_attn = classify(H, params)
    info["head_attention"] = head_attn
    return probs, info


def forward_model(
    sequence: FrameSequence, params, config: ModelConfig, variant: str = "full"
) -> Prediction:
    probs, info = forward_batch(
        sequence.frames[None], [sequence.apex_index], params, config, variant
    )
    p = probs.data[0]
    attention = {
        "encoder": [m[0] for m in info["encoder_attention"]],
        "head": info["head_attention"][0],
    }
    if "adjacency" in info:
        stack: AdjacencyStack = info["adjacency"]
        attention["adjacency"] = [stack.initial.data[0]] + [a.data[0] for a in stack.layers]
    return Prediction(p, int(np.argmax(p)), attention)
