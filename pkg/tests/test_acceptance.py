"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section at the end of the output.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from motiongcn.cli import main
from motiongcn.data import load_manifest
from motiongcn.errors import ConfigError
from motiongcn.gcn import VARIANTS, ModelConfig, adaptive_tm, forward_model, init_params
from motiongcn.graph import angular_similarity, assemble_adjacency, build_topology, decayed_weight
from motiongcn.motion import FrameSequence
from motiongcn.numerics import Tensor
from motiongcn.training import compute_metrics, loso_split
from oracles import HAND_17, brute_metrics, full_model_gradient_error, oracle_edges
from test_numerics import FUNCS, worst_op_error


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


# --- shared synthetic benchmark -------------------------------------------------

BENCH_SPEC = {"num_subjects": 6, "clips_per_subject": 12, "num_classes": 3, "height": 32, "width": 32,
              "clip_length": 16, "seed": 7}
BENCH_RUN = {"preset": "small", "epochs": 50, "seed": 7, "lr0": 1e-3}


def _cli(args: list[str]) -> None:
    code = main(args)
    assert code == 0, f"{args[0]} exited with {code}"


def _write(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


# --- criteria -------------------------------------------------------------------


def test_criterion_1_gradient_integrity():
    start = time.perf_counter()
    op_errors = {name: worst_op_error(name) for name in FUNCS}
    model_errors = {v: full_model_gradient_error(v) for v in VARIANTS}
    elapsed = time.perf_counter() - start
    worst = max(max(op_errors.values()), max(model_errors.values()))
    record(
        1,
        worst < 1e-4 and elapsed < 120,
        f"max rel err {worst:.2e} over {len(op_errors)} op cases x 20 points and 4 variants "
        f"(L=8, 16x16, d=8, c=3); {elapsed:.1f}s",
    )


def test_criterion_2_topology_oracle():
    mismatches = 0
    checked = 0
    for length in range(3, 21):
        for apex in range(2, length + 1):
            for w in range(1, 5):
                checked += 1
                if set(build_topology(length, apex, w).edges) != oracle_edges(length, apex, w):
                    mismatches += 1
    hand = build_topology(6, 4, 1)
    ok = mismatches == 0 and set(hand.edges) == HAND_17 and len(hand.edges) == 17
    record(2, ok, f"{checked - mismatches}/{checked} configurations match; hand case has {len(hand.edges)} edges")


def test_criterion_3_edge_weight_identities():
    a = np.array([0.4, -1.3, 2.0])
    same = angular_similarity(a, a).item()
    orth = angular_similarity([1.0, 0.0], [0.0, 1.0]).item()
    opposite = angular_similarity(a, -a).item()
    anchors = abs(same - 1) < 1e-3 and orth == pytest.approx(0.5, abs=1e-12) and abs(opposite) < 1e-3
    decay_err = abs(decayed_weight(1.0, 3, 13, 10.0) - math.exp(-1))
    rejected = 0
    topo = build_topology(6, 4, 1)
    for lam in ((2.0, 2.0), (2.5, 2.0)):
        try:
            assemble_adjacency(np.ones((5, 3)), topo, 10.0, *lam)
        except ConfigError:
            rejected += 1
    cfg = ModelConfig(clip_length=8, height=16, width=16, patch=8, dim=8, heads=2, layers=4, blocks=2,
                      forget=(0.0, 0.25, 0.5, 0.75))
    params = init_params(cfg, np.random.default_rng(0))
    seq = FrameSequence(np.random.default_rng(1).uniform(size=(8, 1, 16, 16)), 5)
    mask = build_topology(8, 5, cfg.window).mask
    layers = forward_model(seq, params, cfg).attention["adjacency"]
    masked_zero = all(np.all(m[mask == 0] == 0.0) for m in layers)
    ok = anchors and decay_err < 1e-9 and rejected == 2 and masked_zero
    record(
        3,
        ok,
        f"anchors {same:.5f}/{orth:.5f}/{opposite:.5f}; decay err {decay_err:.1e}; "
        f"lambda rejections {rejected}/2; masked zeros through {len(layers)} matrices: {masked_zero}",
    )


def test_criterion_4_adaptive_endpoints():
    rng = np.random.default_rng(3)
    topo = build_topology(9, 4, 2)
    n = topo.num_nodes
    a0 = assemble_adjacency(rng.normal(size=(n, 5)), topo).initial.data
    prev = rng.uniform(size=(n, n)) * topo.mask
    w, b = Tensor(rng.normal(size=(n, n))), Tensor(rng.normal(size=n))
    one = adaptive_tm(prev, a0, 1.0, w, b, topo.mask).data
    zero = adaptive_tm(prev, a0, 0.0, w, b, topo.mask).data
    exact_one = one.tobytes() == a0.tobytes()
    exact_zero = np.array_equal(zero, topo.mask * (prev @ w.data + b.data))

    cfg = ModelConfig(clip_length=8, height=16, width=16, patch=8, dim=8, heads=2, forget=(1.0,))
    params = init_params(cfg, np.random.default_rng(4))
    seq = FrameSequence(np.random.default_rng(5).uniform(size=(8, 1, 16, 16)), 3)
    gap = np.max(np.abs(forward_model(seq, params, cfg, "full").probabilities
                        - forward_model(seq, params, cfg, "no_atm").probabilities))
    record(
        4,
        exact_one and exact_zero and gap <= 1e-12,
        f"f=1 bit-exact: {exact_one}; f=0 equals masked FC: {exact_zero}; |full - no_atm| = {gap:.1e}",
    )


def test_criterion_5_metric_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 7))
        size = int(rng.integers(1, 40))
        labels, preds = rng.integers(0, c, size=size), rng.integers(0, c, size=size)
        m = compute_metrics(preds, labels, c)
        ref = brute_metrics(preds.tolist(), labels.tolist(), c)
        worst = max(worst, abs(m.uf1 - ref[0]), abs(m.uar - ref[1]), abs(m.acc - ref[2]))
    hand = compute_metrics([0, 0, 1], [0, 1, 1], 2)
    hand_ok = abs(hand.uf1 - 2 / 3) <= 1e-12 and abs(hand.uar - 0.75) <= 1e-12
    record(5, worst <= 1e-12 and hand_ok,
           f"max deviation {worst:.1e} over 1000 sets; hand case UF1={hand.uf1:.6f} UAR={hand.uar:.6f}")


@pytest.fixture(scope="module")
def benchmark(workspace):
    """Synthetic benchmark on disk plus a LOSO run of the small preset."""
    root = workspace / "bench"
    root.mkdir()
    spec = _write(root / "spec.json", BENCH_SPEC)
    _cli(["synth", "--spec", str(spec), "--out", str(root / "data")])
    run = _write(root / "run.json", {**BENCH_RUN, "manifest": str(root / "data" / "manifest.csv")})
    start = time.perf_counter()
    _cli(["loso", "--config", str(run), "--out", str(root / "loso")])
    elapsed = time.perf_counter() - start
    report = json.loads((root / "loso" / "loso_report.json").read_text())
    return root, report, elapsed


def test_criterion_6_synthetic_learning(benchmark):
    _, report, elapsed = benchmark
    agg = report["aggregate"]
    train_uf1 = agg["train_subject_mean"]["uf1"]
    test_uar = agg["subject_mean"]["uar"]
    record(
        6,
        train_uf1 >= 0.95 and test_uar >= 0.60 and elapsed < 1200,
        f"train-split UF1 {train_uf1:.4f} (>= 0.95); LOSO subject-mean UAR {test_uar:.4f} (>= 0.60); "
        f"test UF1 {agg['subject_mean']['uf1']:.4f}; {elapsed:.0f}s (< 1200s)",
    )


def test_criterion_7_ablation_table(workspace):
    root = workspace / "ablation"
    root.mkdir()
    spec = _write(root / "spec.json", {**BENCH_SPEC, "noise": 0.0})
    _cli(["synth", "--spec", str(spec), "--out", str(root / "data")])
    run = _write(root / "run.json", {**BENCH_RUN, "manifest": str(root / "data" / "manifest.csv")})
    _cli(["ablate", "--config", str(run), "--out", str(root / "out")])
    rows = json.loads((root / "out" / "ablation.json").read_text())["subject_mean"]
    table = (root / "out" / "ablation.md").read_text()
    print(table)
    shape_ok = set(rows) == set(VARIANTS) and len(table.strip().splitlines()) == 2 + len(VARIANTS)
    full, no_gcn = rows["full"]["uf1"], rows["no_gcn"]["uf1"]
    summary = ", ".join(f"{v} {rows[v]['uf1']:.4f}" for v in ("no_gcn", "no_motion", "no_atm", "full"))
    record(7, shape_ok and full >= no_gcn, f"noise-free UF1: {summary}; asserted full >= no_gcn")


def test_criterion_8_determinism(workspace):
    root = workspace / "determinism"
    root.mkdir()
    spec = _write(root / "spec.json", {"num_subjects": 3, "clips_per_subject": 6, "height": 16, "width": 16, "seed": 7})
    _cli(["synth", "--spec", str(spec), "--out", str(root / "data")])
    run = _write(root / "run.json", {"manifest": str(root / "data" / "manifest.csv"), "epochs": 3, "lr0": 1e-3,
                                     "frame_size": [16, 16], "dim": 16, "heads": 2, "seed": 7})
    for name in ("a", "b"):
        _cli(["loso", "--config", str(run), "--out", str(root / name)])
    files = ("loso_report.json", "loso_history.json")
    same = [(root / "a" / f).read_bytes() == (root / "b" / f).read_bytes() for f in files]
    record(8, all(same), f"byte-identical {dict(zip(files, same))}")


def test_criterion_9_loso_protocol(benchmark):
    root, report, _ = benchmark
    rng = np.random.default_rng(9)
    datasets = [rng.choice([f"s{k:02d}" for k in range(int(rng.integers(2, 9)))], size=int(rng.integers(2, 60)))
                for _ in range(300)]
    bench_ids = [r.subject_id for r in load_manifest(root / "data" / "manifest.csv").rows]
    datasets.append(np.array(bench_ids))
    failures = 0
    checked = 0
    for ids in datasets:
        ids = ids.tolist()
        if len(set(ids)) < 2:
            continue
        checked += 1
        folds = loso_split(ids)
        tests = [set(f.test) for f in folds]
        partition = sum(len(t) for t in tests) == len(ids) and set().union(*tests) == set(range(len(ids)))
        disjoint = all(not set(f.train) & set(f.test) and len(f.train) + len(f.test) == len(ids) for f in folds)
        if not (partition and disjoint and len(folds) == len(set(ids))):
            failures += 1
    bench_folds = report["num_folds"] == len(set(bench_ids))
    record(9, failures == 0 and bench_folds,
           f"{checked - failures}/{checked} datasets partition exactly; benchmark folds {report['num_folds']} "
           f"for {len(set(bench_ids))} subjects")
