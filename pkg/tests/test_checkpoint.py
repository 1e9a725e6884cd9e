from __future__ import annotations

import json

import numpy as np
import pytest

from motiongcn import checkpoint
from motiongcn.errors import FormatError
from motiongcn.gcn import ModelConfig, init_params

CFG = ModelConfig(clip_length=6, height=8, width=8, patch=4, dim=4, heads=2)


def test_round_trip(tmp_path):
    params = init_params(CFG, np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, params, CFG, {"variant": "no_atm"})
    loaded, cfg, meta = checkpoint.load(path)
    assert cfg == CFG and meta == {"variant": "no_atm"}
    assert list(loaded) == list(params)
    for name in params:
        assert loaded[name].data.tobytes() == params[name].data.tobytes()


def test_bytes_stable():
    a = checkpoint.dumps(init_params(CFG, np.random.default_rng(1)), CFG)
    b = checkpoint.dumps(init_params(CFG, np.random.default_rng(1)), CFG)
    assert a == b


def test_header_layout():
    params = init_params(CFG, np.random.default_rng(2))
    buf = checkpoint.dumps(params, CFG)
    assert buf.startswith(b"MOTIONGCN-CKPT\n")
    header = json.loads(buf.split(b"\n")[1])
    assert header["version"] == 1
    total = sum(e["count"] for e in header["tensors"])
    assert len(buf) - (len(b"MOTIONGCN-CKPT\n") + len(buf.split(b"\n")[1]) + 1) == 8 * total


def test_rejects_bad_files(tmp_path):
    with pytest.raises(FormatError):
        checkpoint.loads(b"hello")
    buf = checkpoint.dumps(init_params(CFG, np.random.default_rng(3)), CFG)
    with pytest.raises(FormatError):
        checkpoint.loads(buf[:-8])
    with pytest.raises(FormatError):
        checkpoint.load(tmp_path / "missing.ckpt")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    checkpoint.atomic_write(tmp_path / "sub" / "x.bin", b"abc")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.bin"]
