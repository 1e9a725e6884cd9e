"""Run configuration: defaults, model-size presets, JSON file and flag overrides.

Resolution order is defaults -> JSON file -> command-line flags. The preset
then supplies blocks, layers, window and downsample_hz for whichever of those
were not given explicitly, so an explicit value always beats the preset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .gcn import PRESETS, VARIANTS, ModelConfig
from .training import DEFAULT_DECAY, TrainConfig

PRESET_DOWNSAMPLE = {"small": 30.0, "large": None}


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    out: str = "runs"
    preset: str = "small"
    variant: str = "full"
    seed: int = 0
    jobs: int = 1
    # training
    epochs: int = 50
    lr0: float = 1e-4
    lr_decay: float = DEFAULT_DECAY
    batch_size: int = 8
    gamma: float = 2.0
    alpha: list | None = None
    weight_decay: float = 0.01
    augment: bool = False
    # data
    clip_length: int = 16
    frame_size: list = (32, 32)
    downsample_hz: float | None = None
    num_classes: int | None = None
    channels: int | None = None
    # model
    blocks: int | None = None
    layers: int | None = None
    window: int | None = None
    dim: int = 64
    heads: int = 4
    patch: int = 8
    mlp_ratio: int = 2
    tau: float = 10.0
    lam_local: float = 1.0
    lam_global: float = 2.0
    forget: float | list = 0.5
    residual: bool = True

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def echo(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def model_config(self, num_classes: int | None = None, channels: int | None = None) -> ModelConfig:
        c = self.num_classes if self.num_classes is not None else num_classes
        ch = self.channels if self.channels is not None else channels
        if c is None:
            raise ConfigError("num_classes: unknown; set it or provide a manifest")
        try:
            return ModelConfig(
                num_classes=int(c),
                clip_length=self.clip_length,
                channels=int(ch or 1),
                height=int(self.frame_size[0]),
                width=int(self.frame_size[1]),
                patch=self.patch,
                dim=self.dim,
                heads=self.heads,
                blocks=self.blocks,
                mlp_ratio=self.mlp_ratio,
                layers=self.layers,
                window=self.window,
                tau=self.tau,
                lam_local=self.lam_local,
                lam_global=self.lam_global,
                forget=tuple(self.forget) if isinstance(self.forget, (list, tuple)) else self.forget,
                residual=self.residual,
            )
        except ConfigError as exc:
            raise ConfigError(f"model: {exc}") from None

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self.epochs,
                lr0=self.lr0,
                lr_decay=self.lr_decay,
                batch_size=self.batch_size,
                gamma=self.gamma,
                alpha=None if self.alpha is None else tuple(self.alpha),
                seed=self.seed,
                variant=self.variant,
                weight_decay=self.weight_decay,
                augment=self.augment,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_NULLABLE = {"manifest", "alpha", "downsample_hz", "num_classes", "channels"}


def _coerce(key: str, value, default):
    if value is None:
        if key in _NULLABLE:
            return None
        raise ConfigError(f"{key}: may not be null")
    if key in ("frame_size",):
        if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(isinstance(v, int) and v > 0 for v in value):
            raise ConfigError(f"{key}: expected [height, width] positive integers, got {value!r}")
        return list(value)
    if key == "alpha":
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return list(value)
    if key == "forget":
        if isinstance(value, (list, tuple)):
            if not all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in value):
                raise ConfigError(f"{key}: rates must lie in [0, 1], got {value!r}")
            return list(value)
        if not isinstance(value, (int, float)) or not 0 <= value <= 1:
            raise ConfigError(f"{key}: rate must lie in [0, 1], got {value!r}")
        return float(value)
    if isinstance(default, bool) or key in ("augment", "residual"):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if key in ("manifest", "out", "preset", "variant"):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    int_keys = {"seed", "jobs", "epochs", "batch_size", "clip_length", "num_classes", "channels",
                "blocks", "layers", "window", "dim", "heads", "patch", "mlp_ratio"}
    if key in int_keys:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if key != "seed" and value < 1:
            raise ConfigError(f"{key}: must be >= 1, got {value}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def build_config(data: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file data and flag overrides onto the defaults, then fill from the preset."""
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    for source in (data or {}, overrides or {}):
        for key, value in source.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value, getattr(defaults, key))
    preset = merged.get("preset", defaults.preset)
    if preset not in PRESETS:
        raise ConfigError(f"preset: expected one of {sorted(PRESETS)}, got {preset!r}")
    variant = merged.get("variant", defaults.variant)
    if variant not in VARIANTS:
        raise ConfigError(f"variant: expected one of {list(VARIANTS)}, got {variant!r}")
    fill = dict(PRESETS[preset], downsample_hz=PRESET_DOWNSAMPLE[preset])
    for key, value in fill.items():
        merged.setdefault(key, value)
    return replace(defaults, **merged)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path}: expected a JSON object")
    return build_config(data, overrides)
