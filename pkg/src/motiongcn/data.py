"""Manifests, clip preprocessing, clip-uniform augmentation and a synthetic generator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import netpbm
from .errors import ConfigError, FormatError, InputError
from .motion import FrameSequence

MANIFEST_FIELDS = ("clip_dir", "subject_id", "onset_index", "apex_index", "num_frames", "label", "fps")


@dataclass(frozen=True)
class ManifestRow:
    clip_dir: str
    subject_id: str
    onset_index: int
    apex_index: int
    num_frames: int
    label: int
    fps: float


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.rows})

    @property
    def num_classes(self) -> int:
        return max(r.label for r in self.rows) + 1 if self.rows else 0

    def clip_path(self, row: ManifestRow) -> Path:
        p = Path(row.clip_dir)
        return p if p.is_absolute() else self.root / p


def _validate_row(row: ManifestRow, line: int, num_classes: int | None) -> None:
    where = f"manifest row {line} ({row.clip_dir})"
    if row.onset_index != 1:
        raise InputError(f"{where}: onset_index must be 1, got {row.onset_index}")
    if not row.onset_index < row.apex_index <= row.num_frames:
        raise InputError(
            f"{where}: need onset < apex <= num_frames, got "
            f"onset={row.onset_index} apex={row.apex_index} num_frames={row.num_frames}"
        )
    if row.label < 0 or (num_classes is not None and row.label >= num_classes):
        raise InputError(f"{where}: label {row.label} out of range")
    if not row.fps > 0:
        raise InputError(f"{where}: fps must be positive, got {row.fps}")


def parse_manifest(text: str, root: Path = Path("."), num_classes: int | None = None) -> DatasetManifest:
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames:
        raise FormatError("manifest is empty (no header row)")
    header = [h.strip() for h in reader.fieldnames]
    for name in MANIFEST_FIELDS:
        if name not in header:
            raise FormatError(f"manifest is missing column {name!r}")
    rows = []
    for line, raw in enumerate(reader, start=2):
        raw = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        try:
            row = ManifestRow(
                clip_dir=raw["clip_dir"],
                subject_id=raw["subject_id"],
                onset_index=int(raw["onset_index"]),
                apex_index=int(raw["apex_index"]),
                num_frames=int(raw["num_frames"]),
                label=int(raw["label"]),
                fps=float(raw["fps"]),
            )
        except ValueError as exc:
            raise FormatError(f"manifest row {line}: {exc}") from None
        _validate_row(row, line, num_classes)
        rows.append(row)
    return DatasetManifest(rows, root)


def load_manifest(path, num_classes: int | None = None) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FormatError(f"manifest not found: {path}") from None
    return parse_manifest(text, path.parent, num_classes)


def format_manifest(rows: list[ManifestRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for r in rows:
        writer.writerow([getattr(r, f) for f in MANIFEST_FIELDS])
    return buf.getvalue()


@dataclass
class RawClip:
    """Frames as loaded from disk, before any temporal or spatial resampling."""

    frames: np.ndarray  # (L, C, H, W)
    apex_index: int
    fps: float
    subject_id: str = ""
    label: int = 0


def load_clip(manifest: DatasetManifest, row: ManifestRow) -> RawClip:
    clip_dir = manifest.clip_path(row)
    frames = [netpbm.read_image(netpbm.frame_path(clip_dir, i)) for i in range(1, row.num_frames + 1)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise FormatError(f"{clip_dir}: frames have differing shapes {sorted(shapes)}")
    return RawClip(np.stack(frames), row.apex_index, row.fps, row.subject_id, row.label)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(int)


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic bilinear weights with half-pixel centres."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - w)
    np.add.at(m, (np.arange(n_out), hi), w)
    return m


def resize(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes to ``size`` = (H, W)."""
    h, w = frames.shape[-2:]
    if (h, w) == tuple(size):
        return frames.copy()
    rows = _interp_matrix(size[0], h)
    cols = _interp_matrix(size[1], w)
    return rows @ frames @ cols.T


def downsample_stride(fps: float, target_hz: float | None) -> int:
    if not target_hz or fps <= target_hz:
        return 1
    return math.ceil(fps / target_hz)


def remap_apex(apex: int, length: int, target_length: int) -> int:
    if length == 1:
        return 2
    new = 1 + int(_round_half_up((apex - 1) * (target_length - 1) / (length - 1)))
    return min(max(new, 2), target_length)


def preprocess(
    clip: RawClip,
    target_length: int = 16,
    target_size: tuple[int, int] = (32, 32),
    downsample_hz: float | None = None,
) -> FrameSequence:
    """Downsample, resample to a fixed length (frame 1 kept), resize, clamp to [0, 1]."""
    if target_length < 3:
        raise ConfigError(f"target_length must be >= 3, got {target_length}")
    frames = np.asarray(clip.frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise InputError(f"clip has {frames.shape[0]} frames; need at least 2")
    stride = downsample_stride(clip.fps, downsample_hz)
    apex = clip.apex_index
    if stride > 1:
        frames = frames[::stride]
        apex = 1 + int(_round_half_up((apex - 1) / stride))
        apex = min(max(apex, 1), frames.shape[0])
    if frames.shape[0] < 2:
        raise InputError(f"clip shorter than 2 frames after downsampling to {downsample_hz} Hz")
    length = frames.shape[0]
    picks = _round_half_up(np.arange(target_length) * (length - 1) / (target_length - 1))
    frames = frames[picks]
    apex = remap_apex(apex, length, target_length)
    frames = np.clip(resize(frames, tuple(target_size)), 0.0, 1.0)
    return FrameSequence(frames, apex, clip.subject_id, clip.label)


def load_dataset(
    manifest: DatasetManifest,
    target_length: int = 16,
    target_size: tuple[int, int] = (32, 32),
    downsample_hz: float | None = None,
) -> list[FrameSequence]:
    return [
        preprocess(load_clip(manifest, row), target_length, target_size, downsample_hz)
        for row in manifest.rows
    ]


@dataclass(frozen=True)
class AugmentOptions:
    crop: bool = True
    jitter: bool = True
    min_crop: float = 0.875
    brightness: float = 0.05
    contrast: float = 0.1

    @property
    def enabled(self) -> bool:
        return self.crop or self.jitter


def augment(sequence: FrameSequence, rng: np.random.Generator, options: AugmentOptions = AugmentOptions()) -> FrameSequence:
    """Random crop + colour jitter, drawn once and applied to every frame."""
    frames = sequence.frames.copy()
    if options.crop:
        h, w = frames.shape[-2:]
        ch = int(rng.integers(math.ceil(options.min_crop * h), h + 1))
        cw = int(rng.integers(math.ceil(options.min_crop * w), w + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        x0 = int(rng.integers(0, w - cw + 1))
        frames = resize(frames[..., y0 : y0 + ch, x0 : x0 + cw], (h, w))
    if options.jitter:
        offset = rng.uniform(-options.brightness, options.brightness)
        gain = rng.uniform(1.0 - options.contrast, 1.0 + options.contrast)
        centre = frames.mean()
        frames = (frames - centre) * gain + centre + offset
    frames = np.clip(frames, 0.0, 1.0)
    return FrameSequence(frames, sequence.apex_index, sequence.subject_id, sequence.label)


# ---------------------------------------------------------------------------
# synthetic micro-expressions


@dataclass(frozen=True)
class SyntheticSpec:
    num_subjects: int = 6
    clips_per_subject: int = 12
    num_classes: int = 3
    height: int = 32
    width: int = 32
    clip_length: int = 16
    amplitude: float = 0.25
    noise: float = 0.03
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.amplitude <= self.noise:
            raise ConfigError(
                f"amplitude ({self.amplitude}) must exceed noise ({self.noise})"
            )
        if self.num_subjects < 1 or self.clips_per_subject < 1:
            raise ConfigError("need at least one subject and one clip per subject")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.clip_length < 3:
            raise ConfigError("clip_length must be >= 3")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def _gaussian(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w]
    return np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma**2))


def class_templates(spec: SyntheticSpec) -> np.ndarray:
    """(c, H, W) signed motion patterns: a blob displaced along a class direction.

    Class k sits in its own region and moves in its own direction, so both the
    location and the sign layout of its difference image are class-specific.
    """
    h, w = spec.height, spec.width
    sigma = min(h, w) / 12.0
    radius = 0.27 * min(h, w)
    out = []
    for k in range(spec.num_classes):
        theta = 2 * np.pi * k / spec.num_classes + 0.4
        cy = (h - 1) / 2 + radius * np.sin(theta)
        cx = (w - 1) / 2 + radius * np.cos(theta)
        phi = theta + np.pi / 2 + 0.7 * k
        step = 1.5 * sigma
        moved = _gaussian(h, w, cy + step * np.sin(phi), cx + step * np.cos(phi), sigma)
        t = moved - _gaussian(h, w, cy, cx, sigma)
        out.append(t / np.abs(t).max())
    return np.stack(out)


def subject_base(spec: SyntheticSpec, subject: int) -> np.ndarray:
    """Smooth subject-specific "face": a few low-frequency cosines in [0.2, 0.8]."""
    rng = np.random.default_rng([spec.seed, 1, subject])
    h, w = spec.height, spec.width
    y, x = np.mgrid[0:h, 0:w]
    img = np.zeros((h, w))
    for _ in range(4):
        fy, fx = rng.uniform(0.3, 2.0, size=2) * rng.choice([-1, 1], size=2)
        img += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fy * y / h + fx * x / w) + rng.uniform(0, 2 * np.pi))
    img = (img - img.min()) / (img.max() - img.min())
    return 0.2 + 0.6 * img


def envelope(length: int, apex: int) -> np.ndarray:
    """Motion intensity per frame: linear rise to 1 at the apex, exponential decay after."""
    t = np.arange(1, length + 1, dtype=np.float64)
    rise = (t - 1) / (apex - 1)
    fall = np.exp(-(t - apex) / max(length / 4.0, 1.0))
    return np.where(t <= apex, rise, fall)


def synthesize_clip(spec: SyntheticSpec, subject: int, clip: int, label: int) -> tuple[np.ndarray, int]:
    """Frames (L, 1, H, W) in [0, 1] and the 1-based apex index of one clip."""
    rng = np.random.default_rng([spec.seed, 2, subject, clip])
    length = spec.clip_length
    lo, hi = max(2, math.ceil(0.3 * length)), max(2, math.floor(0.7 * length))
    apex = int(rng.integers(lo, hi + 1))
    gain = spec.amplitude * rng.uniform(0.8, 1.2)
    offset = rng.uniform(-0.05, 0.05)
    base = subject_base(spec, subject) + offset
    motion = class_templates(spec)[label]
    env = envelope(length, apex)
    frames = base[None] + gain * env[:, None, None] * motion[None]
    frames = frames + spec.noise * rng.standard_normal(frames.shape)
    return np.clip(frames, 0.0, 1.0)[:, None], apex


def synthesize(spec: SyntheticSpec, out_dir) -> Path:
    """Write a synthetic dataset (frames + manifest.csv) under ``out_dir``."""
    out_dir = Path(out_dir)
    rows = []
    for s in range(spec.num_subjects):
        subject_id = f"s{s + 1:02d}"
        labels = np.arange(spec.clips_per_subject) % spec.num_classes
        labels = np.random.default_rng([spec.seed, 3, s]).permutation(labels)
        for c, label in enumerate(labels):
            frames, apex = synthesize_clip(spec, s, c, int(label))
            clip_dir = f"{subject_id}/clip{c + 1:03d}"
            for i, frame in enumerate(frames, start=1):
                netpbm.write_image(netpbm.frame_path(out_dir / clip_dir, i, channels=1), frame)
            rows.append(ManifestRow(clip_dir, subject_id, 1, apex, spec.clip_length, int(label), spec.fps))
    path = out_dir / "manifest.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(rows))
    return path


def oracle_classify(sequence: FrameSequence, templates: np.ndarray) -> int:
    """Label by correlating the onset->apex difference with each class template."""
    diff = sequence.frame(sequence.apex_index) - sequence.frame(1)
    diff = diff.mean(axis=0)
    scores = [(diff * t).sum() / np.linalg.norm(t) for t in templates]
    return int(np.argmax(scores))
