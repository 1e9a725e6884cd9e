"""Command-line entry point: synth, train, eval, loso, ablate, inspect.

Exit codes: 0 success, 1 validation error (bad config value, bad data),
2 usage error (unknown subcommand or flag). Log verbosity comes from the
``MOTIONGCN_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, netpbm
from .config import RunConfig, load_config
from .data import RawClip, SyntheticSpec, load_dataset, load_manifest, preprocess, synthesize
from .errors import ConfigError, InputError, TrainingError
from .gcn import VARIANTS, forward_model
from .graph import build_topology
from .training import compute_metrics, predict, run_loso, train

log = logging.getLogger("motiongcn")


def write_json(path: Path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    checkpoint.atomic_write(path, text.encode("utf-8"))


def _overrides(args) -> dict:
    out = {}
    for key in ("out", "seed", "variant", "preset", "jobs", "manifest"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config, _overrides(args))
    print(cfg.echo())
    return cfg


def _dataset(cfg: RunConfig):
    if not cfg.manifest:
        raise ConfigError("manifest: no dataset manifest given (config key or --manifest)")
    manifest = load_manifest(cfg.manifest, cfg.num_classes)
    dataset = load_dataset(manifest, cfg.clip_length, tuple(cfg.frame_size), cfg.downsample_hz)
    if not dataset:
        raise InputError(f"manifest {cfg.manifest} lists no clips")
    channels = dataset[0].frames.shape[1]
    num_classes = cfg.num_classes or manifest.num_classes
    return dataset, cfg.model_config(num_classes, channels)


def cmd_synth(args) -> int:
    data = {}
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text())
        except FileNotFoundError:
            raise ConfigError(f"spec file not found: {args.spec}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec file {args.spec}: invalid JSON ({exc})") from None
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SyntheticSpec.from_dict(data)
    print(json.dumps(spec.to_dict(), sort_keys=True, indent=2))
    path = synthesize(spec, args.out)
    print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    dataset, model_cfg = _dataset(cfg)
    result = train(cfg.train_config(), dataset, model_cfg)
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_dict())
    checkpoint.save(out / "checkpoint.ckpt", result.params, model_cfg, {"variant": cfg.variant, "alpha": result.alpha})
    write_json(out / "history.json", result.history)
    last = result.history[-1]
    print(f"epoch {last['epoch']}: loss={last['loss']:.5f} train_uf1={last['train_uf1']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    params, model_cfg, meta = checkpoint.load(args.checkpoint)
    variant = args.variant or meta.get("variant", "full")
    if not cfg.manifest:
        raise ConfigError("manifest: eval needs a dataset manifest")
    manifest = load_manifest(cfg.manifest, model_cfg.num_classes)
    dataset = load_dataset(
        manifest, model_cfg.clip_length, (model_cfg.height, model_cfg.width), cfg.downsample_hz
    )
    probs = predict(params, model_cfg, dataset, variant)
    preds = probs.argmax(axis=1)
    labels = [s.label for s in dataset]
    overall = compute_metrics(preds, labels, model_cfg.num_classes)
    per_subject = {}
    for subject in sorted({s.subject_id for s in dataset}):
        idx = [i for i, s in enumerate(dataset) if s.subject_id == subject]
        per_subject[subject] = compute_metrics(preds[idx], [labels[i] for i in idx], model_cfg.num_classes).to_dict()
    report = {
        "checkpoint": str(args.checkpoint),
        "variant": variant,
        "metrics": overall.to_dict(),
        "per_subject": per_subject,
        "predictions": preds.tolist(),
    }
    write_json(Path(cfg.out) / "eval_report.json", report)
    print(f"uf1={overall.uf1:.4f} uar={overall.uar:.4f} acc={overall.acc:.4f}")
    return 0


def cmd_loso(args) -> int:
    cfg = _resolve(args)
    dataset, model_cfg = _dataset(cfg)
    report, histories = run_loso(cfg.train_config(), model_cfg, dataset, cfg.jobs)
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "loso_report.json", report.to_dict())
    write_json(out / "loso_history.json", histories)
    mean, pooled = report.subject_mean, report.pooled
    print(f"subject-mean uf1={mean['uf1']:.4f} uar={mean['uar']:.4f} acc={mean['acc']:.4f}")
    print(f"pooled       uf1={pooled.uf1:.4f} uar={pooled.uar:.4f} acc={pooled.acc:.4f}")
    return 0


VARIANT_LABELS = {"full": "full", "no_gcn": "w/o GCN", "no_motion": "w/o motion", "no_atm": "w/o ATM"}


def ablation_table(rows: dict[str, dict]) -> str:
    lines = ["| Model | UF1 | UAR | ACC |", "|---|---|---|---|"]
    for variant, m in rows.items():
        name = VARIANT_LABELS.get(variant, variant)
        lines.append(f"| {name} | {100 * m['uf1']:.2f} | {100 * m['uar']:.2f} | {100 * m['acc']:.2f} |")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    dataset, model_cfg = _dataset(cfg)
    out = Path(cfg.out)
    rows, reports = {}, {}
    for variant in ("no_gcn", "no_motion", "no_atm", "full"):
        train_cfg = replace(cfg.train_config(), variant=variant)
        report, _ = run_loso(train_cfg, model_cfg, dataset, cfg.jobs)
        rows[variant] = report.subject_mean
        reports[variant] = report.to_dict()
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "ablation.json", {"subject_mean": rows, "reports": reports})
    table = ablation_table(rows)
    checkpoint.atomic_write(out / "ablation.md", table.encode("utf-8"))
    print(table, end="")
    return 0


def _read_clip_dir(clip_dir: Path) -> np.ndarray:
    frames = []
    i = 1
    while True:
        path = netpbm.frame_path(clip_dir, i)
        if not path.exists():
            break
        frames.append(netpbm.read_image(path))
        i += 1
    if not frames:
        raise InputError(f"no frame_0001.pgm/.ppm found under {clip_dir}")
    return np.stack(frames)


def _normalise(m: np.ndarray) -> np.ndarray:
    lo, hi = m.min(), m.max()
    return np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)


def _write_pgm(path: Path, m: np.ndarray) -> None:
    checkpoint.atomic_write(path, netpbm.encode(_normalise(m)))


def cmd_inspect(args) -> int:
    cfg = _resolve(args)
    params, model_cfg, meta = checkpoint.load(args.checkpoint)
    variant = args.variant or meta.get("variant", "full")
    frames = _read_clip_dir(Path(args.clip))
    if args.apex is not None:
        apex = args.apex
    else:
        # brightest onset difference stands in for an annotated apex
        energy = np.abs(frames - frames[:1]).mean(axis=(1, 2, 3))
        apex = int(np.argmax(energy[1:])) + 2
    fps = args.fps if args.fps is not None else (cfg.downsample_hz or 1.0)
    seq = preprocess(
        RawClip(frames, apex, fps), model_cfg.clip_length, (model_cfg.height, model_cfg.width), cfg.downsample_hz
    )
    pred = forward_model(seq, params, model_cfg, variant)
    out = Path(cfg.out)
    grid = (model_cfg.height // model_cfg.patch, model_cfg.width // model_cfg.patch)
    for b, maps in enumerate(pred.attention["encoder"]):
        for n, m in enumerate(maps):
            _write_pgm(out / "attention" / f"block{b}_pair{n + 2:02d}.pgm", m)
    vis_block = args.vis_block if args.vis_block is not None else 0
    if not 0 <= vis_block < model_cfg.blocks:
        raise ConfigError(f"block: {vis_block} outside [0, {model_cfg.blocks})")
    for n, m in enumerate(pred.attention["encoder"][vis_block]):
        received = m.mean(axis=0).reshape(grid)
        spatial = np.kron(received, np.ones((model_cfg.patch, model_cfg.patch)))
        _write_pgm(out / "spatial" / f"pair{n + 2:02d}.pgm", spatial)
    if "adjacency" in pred.attention:
        topo = build_topology(model_cfg.clip_length, seq.apex_index, model_cfg.window)
        a0 = pred.attention["adjacency"][0]
        lines = [f"{i} {j} {a0[i - 2, j - 2]:.17g}" for i, j in topo.edges]
        checkpoint.atomic_write(out / "topology.txt", ("\n".join(lines) + "\n").encode())
        for layer, a in enumerate(pred.attention["adjacency"]):
            rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in a) + "\n"
            checkpoint.atomic_write(out / f"adjacency_layer{layer}.csv", rows.encode())
    write_json(
        out / "prediction.json",
        {"probabilities": pred.probabilities.tolist(), "predicted": pred.predicted, "apex_index": seq.apex_index},
    )
    print(f"predicted class {pred.predicted}; wrote inspection files under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motiongcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--preset", choices=("small", "large"))
        p.add_argument("--jobs", type=int)
        p.add_argument("--manifest", help="dataset manifest CSV")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on every clip of a manifest")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loso", help="leave-one-subject-out protocol")
    common(p)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("ablate", help="LOSO for all four variants, as a table")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="export attention maps and adjacency matrices")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="directory holding frame_0001.pgm ...")
    p.add_argument("--apex", type=int, help="1-based apex frame (default: max onset difference)")
    p.add_argument("--fps", type=float)
    p.add_argument("--vis-block", type=int, help="encoder block for spatial maps (default 0)")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MOTIONGCN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
