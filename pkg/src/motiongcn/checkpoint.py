"""Checkpoint container.

Layout (version 1)::

    MOTIONGCN-CKPT\\n
    <one line of JSON>\\n
    <raw little-endian float64 payload>

The JSON line holds ``{"version": 1, "model": {...}, "meta": {...},
"tensors": [{"name", "shape", "offset", "count"}, ...]}`` where ``offset``
and ``count`` are in float64 elements from the start of the payload. Tensors
appear in parameter order; keys are sorted so identical parameters always
produce identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gcn import ModelConfig
from .numerics import Tensor

MAGIC = b"MOTIONGCN-CKPT\n"
VERSION = 1


def dumps(params: dict[str, Tensor], config: ModelConfig, meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {"version": VERSION, "model": config.to_dict(), "meta": meta or {}, "tensors": entries}
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + line + b"\n" + b"".join(chunks)


def loads(buf: bytes, source: str = "<bytes>") -> tuple[dict[str, Tensor], ModelConfig, dict]:
    if not buf.startswith(MAGIC):
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    end = buf.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError(f"{source}: truncated header")
    try:
        header = json.loads(buf[len(MAGIC) : end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: bad header JSON ({exc})") from None
    if header.get("version") != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {header.get('version')}")
    payload = np.frombuffer(buf, dtype="<f8", offset=end + 1)
    params = {}
    for e in header["tensors"]:
        stop = e["offset"] + e["count"]
        if stop > payload.size:
            raise FormatError(f"{source}: payload too short for tensor {e['name']!r}")
        arr = payload[e["offset"] : stop].astype(np.float64).reshape(e["shape"])
        params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
    return params, ModelConfig.from_dict(header["model"]), header.get("meta", {})


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, params: dict[str, Tensor], config: ModelConfig, meta: dict | None = None) -> None:
    atomic_write(path, dumps(params, config, meta))


def load(path) -> tuple[dict[str, Tensor], ModelConfig, dict]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"checkpoint not found: {path}") from None
    return loads(buf, str(path))
