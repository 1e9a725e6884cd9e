"""Binary PGM (P5) / PPM (P6) reading and writing for float images in [0, 1]."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        out.append(int(buf[start:pos]))
    return out, pos


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode P5/P6 bytes into a (C, H, W) float64 array scaled to [0, 1]."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{source}: not a binary PGM/PPM (magic {magic!r})")
    try:
        (width, height, maxval), pos = _tokens(buf, 3, 2)
    except ValueError as exc:
        raise FormatError(f"{source}: bad header ({exc})") from None
    if not 0 < maxval < 65536:
        raise FormatError(f"{source}: maxval {maxval} out of range")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(buf) - pos < count * dtype.itemsize:
        raise FormatError(f"{source}: raster shorter than {width}x{height}x{channels}")
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    img = raster.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / maxval


def encode(image: np.ndarray) -> bytes:
    """Encode a (C, H, W) or (H, W) image in [0, 1] as 8-bit P5 (C=1) or P6 (C=3)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    channels, height, width = img.shape
    if channels not in (1, 3):
        raise FormatError(f"cannot store {channels} channels in PGM/PPM")
    raster = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + raster.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing frame file {path}") from None
    return decode(buf, str(path))


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(image))


def frame_path(clip_dir, index: int, channels: int | None = None) -> Path:
    """Frame ``index`` (1-based) under ``clip_dir``; probes .pgm then .ppm."""
    base = Path(clip_dir) / f"frame_{index:04d}"
    if channels == 3:
        return base.with_suffix(".ppm")
    if channels == 1:
        return base.with_suffix(".pgm")
    pgm = base.with_suffix(".pgm")
    return pgm if os.path.exists(pgm) or not os.path.exists(base.with_suffix(".ppm")) else base.with_suffix(".ppm")
