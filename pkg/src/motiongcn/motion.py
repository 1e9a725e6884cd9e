"""Onset pairing, frame differencing and the attention-based motion encoder."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .errors import ConfigError, InputError
from .numerics import Tensor


@dataclass
class FrameSequence:
    """One clip. ``frames`` has shape (L, C, H, W); indices are 1-based."""

    frames: np.ndarray
    apex_index: int
    subject_id: str = ""
    label: int = 0
    onset_index: int = 1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise InputError(f"frames must be (L, C, H, W), got shape {self.frames.shape}")
        if self.length < 2:
            raise InputError(f"a clip needs at least 2 frames, got {self.length}")
        if self.onset_index != 1:
            raise InputError(f"onset_index must be 1, got {self.onset_index}")
        if not 2 <= self.apex_index <= self.length:
            raise InputError(f"apex_index {self.apex_index} outside [2, {self.length}]")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def frame(self, i: int) -> np.ndarray:
        return self.frames[i - 1]


@dataclass
class MotionInput:
    pair_index: int
    difference: np.ndarray
    is_apex: bool = False


def pair_frames(sequence: FrameSequence) -> list[MotionInput]:
    """Pair frames 2..L with the onset frame and take the signed difference."""
    if sequence.length < 2:
        raise InputError("pairing needs at least 2 frames")
    onset = sequence.frame(sequence.onset_index)
    return [
        MotionInput(i, sequence.frame(i) - onset, is_apex=(i == sequence.apex_index))
        for i in range(2, sequence.length + 1)
    ]


def temporal_encoding(i: float, dim: int) -> np.ndarray:
    """Sinusoidal code of the pair index: sin on even slots, cos on odd ones."""
    if dim <= 0 or dim % 2:
        raise ConfigError(f"temporal encoding dimension must be even and positive, got {dim}")
    k = np.arange(dim // 2)
    angle = i / 10000.0 ** (2 * k / dim)
    code = np.empty(dim)
    code[0::2] = np.sin(angle)
    code[1::2] = np.cos(angle)
    return code


@lru_cache(maxsize=32)
def _code_table(count: int, dim: int) -> np.ndarray:
    table = np.stack([temporal_encoding(i, dim) for i in range(count)])
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 1
    height: int = 32
    width: int = 32
    patch: int = 8
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"frame size {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 2:
            raise ConfigError(f"dim must be even for the temporal code, got {self.dim}")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def init_encoder(config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder") -> dict[str, Tensor]:
    d, hidden = config.dim, config.dim * config.mlp_ratio
    params = {
        f"{prefix}.embed.w": _dense(rng, config.patch_dim, d),
        f"{prefix}.embed.b": np.zeros(d),
    }
    for b in range(config.blocks):
        p = f"{prefix}.block{b}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.{name}"] = _dense(rng, d, d)
        params[f"{p}.bo"] = np.zeros(d)
        params[f"{p}.mlp.w1"] = _dense(rng, d, hidden)
        params[f"{p}.mlp.b1"] = np.zeros(hidden)
        params[f"{p}.mlp.w2"] = _dense(rng, hidden, d)
        params[f"{p}.mlp.b2"] = np.zeros(d)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(P, C, H, W) -> (P, T, C*patch*patch), patches in row-major grid order."""
    n, c, h, w = images.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    x = images.reshape(n, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, (h // patch) * (w // patch), c * patch * patch)


def _attention(x: Tensor, params, prefix: str, heads: int):
    n, t, d = x.shape
    dh = d // heads

    def split(y: Tensor) -> Tensor:
        return nx.transpose(nx.reshape(y, (n, t, heads, dh)), (0, 2, 1, 3))

    q = split(x @ params[f"{prefix}.wq"])
    k = split(x @ params[f"{prefix}.wk"])
    v = split(x @ params[f"{prefix}.wv"])
    attn = nx.softmax((q @ nx.transpose(k)) * (1.0 / np.sqrt(dh)))
    out = nx.reshape(nx.transpose(attn @ v, (0, 2, 1, 3)), (n, t, d))
    return out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"], attn


def encode_batch(
    images: np.ndarray,
    pair_indices,
    params,
    config: EncoderConfig,
    prefix: str = "encoder",
) -> tuple[Tensor, list[np.ndarray]]:
    """Encode P images (P, C, H, W) with their pair indices.

    Returns the (P, dim) feature Tensor and, per block, the head-averaged
    (P, T, T) attention matrices as plain arrays.
    """
    images = np.asarray(images, dtype=np.float64)
    expected = (config.channels, config.height, config.width)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ConfigError(f"encoder expects (P, {expected}) inputs, got {images.shape}")
    tokens = Tensor(patchify(images, config.patch))
    codes = _code_table(int(max(pair_indices)) + 1, config.dim)[np.asarray(pair_indices)][:, None, :]

    x = tokens @ params[f"{prefix}.embed.w"] + params[f"{prefix}.embed.b"]
    x = x + Tensor(codes)
    maps = []
    for b in range(config.blocks):
        p = f"{prefix}.block{b}"
        out, attn = _attention(x, params, p, config.heads)
        x = x + out
        hidden = nx.relu(x @ params[f"{p}.mlp.w1"] + params[f"{p}.mlp.b1"])
        x = x + (hidden @ params[f"{p}.mlp.w2"] + params[f"{p}.mlp.b2"])
        maps.append(attn.data.mean(axis=1))
    return nx.mean(x, axis=1), maps


def encode_motion(
    motion_input: MotionInput, params, config: EncoderConfig, prefix: str = "encoder"
) -> tuple[Tensor, list[np.ndarray]]:
    """Feature of one pair plus its per-block (T, T) attention matrices."""
    feats, maps = encode_batch(
        motion_input.difference[None], [motion_input.pair_index], params, config, prefix
    )
    return nx.reshape(feats, (config.dim,)), [m[0] for m in maps]
