"""Focal loss, AdamW, learning-rate decay, LOSO folds, metrics and the training loop."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .data import AugmentOptions, augment
from .errors import InputError, ProtocolError, TrainingError
from .gcn import VARIANTS, ModelConfig, forward_batch, init_params
from .motion import FrameSequence
from .numerics import Tape, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_DECAY = 10.0 ** (-2.0 / 50.0)


def focal_loss(probabilities, labels, gamma: float = 2.0, alpha=None) -> Tensor:
    """Mean of -alpha_y (1 - p_y)^gamma log p_y over the batch.

    ``probabilities`` is (c,) or (B, c); ``labels`` an int or B ints;
    ``alpha`` an optional per-class weight vector (defaults to ones).
    """
    probs = nx.as_tensor(probabilities)
    if probs.ndim == 1:
        probs = nx.reshape(probs, (1, probs.shape[0]))
    c = probs.shape[-1]
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape[0] != probs.shape[0]:
        raise InputError(f"{labels.shape[0]} labels for {probs.shape[0]} predictions")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InputError(f"labels {labels.tolist()} outside [0, {c})")
    weights = np.ones(c) if alpha is None else np.asarray(alpha, dtype=np.float64)
    p = nx.clip((probs * Tensor(np.eye(c)[labels])).sum(axis=-1), PROB_FLOOR, 1.0)
    modulator = nx.power(1.0 - p, gamma)
    per_sample = modulator * nx.log(p) * Tensor(-weights[labels])
    return per_sample.mean()


def class_weights(labels, num_classes: int) -> np.ndarray:
    """Inverse class frequency over the classes present, scaled to mean 1."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_classes).astype(float)
    present = counts > 0
    alpha = np.ones(num_classes)
    alpha[present] = 1.0 / counts[present]
    alpha[present] *= present.sum() / alpha[present].sum()
    return alpha


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> AdamState:
    """One in-place AdamW update with decoupled weight decay."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise InputError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name].data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        params[name].data = p - update - lr * weight_decay * p
    return state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr0: float = 1e-4
    lr_decay: float = DEFAULT_DECAY
    batch_size: int = 8
    gamma: float = 2.0
    alpha: tuple[float, ...] | None = None
    seed: int = 0
    variant: str = "full"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = False

    def __post_init__(self):
        if not self.lr0 > 0:
            raise InputError(f"lr0 must be positive, got {self.lr0}")
        if self.gamma < 0:
            raise InputError(f"gamma must be >= 0, got {self.gamma}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    return config.lr0 * config.lr_decay**epoch


@dataclass(frozen=True)
class Fold:
    subject: str
    train: tuple[int, ...]
    test: tuple[int, ...]


def loso_split(subject_ids) -> list[Fold]:
    """One fold per subject (sorted by id); the test set is that subject's clips."""
    ids = [s.subject_id if isinstance(s, FrameSequence) else s for s in subject_ids]
    subjects = sorted(set(ids))
    if len(subjects) < 2:
        raise ProtocolError(f"LOSO needs at least 2 subjects, got {len(subjects)}")
    folds = []
    for s in subjects:
        test = tuple(i for i, sid in enumerate(ids) if sid == s)
        train = tuple(i for i, sid in enumerate(ids) if sid != s)
        folds.append(Fold(s, train, test))
    return folds


@dataclass
class Metrics:
    uf1: float
    uar: float
    acc: float
    confusion: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    support: np.ndarray

    def to_dict(self) -> dict:
        return {
            "uf1": self.uf1,
            "uar": self.uar,
            "acc": self.acc,
            "confusion": self.confusion.tolist(),
            "tp": self.tp.tolist(),
            "fp": self.fp.tolist(),
            "fn": self.fn.tolist(),
            "support": self.support.tolist(),
        }


def compute_metrics(predictions, labels, num_classes: int) -> Metrics:
    """UF1, UAR and accuracy from predicted and true class indices.

    Classes absent from both labels and predictions are left out of UF1;
    classes absent from the labels are left out of UAR (recall is 0/0).
    """
    pred = np.asarray(predictions, dtype=int).reshape(-1)
    true = np.asarray(labels, dtype=int).reshape(-1)
    if pred.shape != true.shape:
        raise InputError(f"{pred.size} predictions for {true.size} labels")
    for name, arr in (("prediction", pred), ("label", true)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InputError(f"{name} outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).copy()
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    support = confusion.sum(axis=1)

    seen = (support > 0) | (fp > 0)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    uf1 = float(f1[seen].mean()) if seen.any() else 0.0
    has = support > 0
    uar = float((tp[has] / support[has]).mean()) if has.any() else 0.0
    acc = float(tp.sum() / true.size) if true.size else 0.0
    return Metrics(uf1, uar, acc, confusion, tp, fp, fn, support)


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def predict(params, model_config: ModelConfig, dataset, variant: str = "full", batch_size: int = 32) -> np.ndarray:
    """Class probabilities (n, c) for a list of FrameSequences; no tape."""
    out = []
    for idx in _batches(np.arange(len(dataset)), batch_size):
        frames = np.stack([dataset[i].frames for i in idx])
        apex = [dataset[i].apex_index for i in idx]
        probs, _ = forward_batch(frames, apex, params, model_config, variant)
        out.append(probs.data)
    return np.concatenate(out) if out else np.zeros((0, model_config.num_classes))


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[dict]
    alpha: list[float]


def train(
    config: TrainConfig,
    dataset: list[FrameSequence],
    model_config: ModelConfig,
    fold_key: int = 0,
) -> TrainResult:
    """Train one model from scratch; deterministic in (seed, fold_key)."""
    if not dataset:
        raise InputError("cannot train on an empty dataset")
    c = model_config.num_classes
    labels = np.array([s.label for s in dataset])
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"labels outside [0, {c})")
    init_rng = np.random.default_rng([config.seed, fold_key, 0])
    rng = np.random.default_rng([config.seed, fold_key, 1])
    params = init_params(model_config, init_rng)
    alpha = np.asarray(config.alpha, dtype=float) if config.alpha is not None else class_weights(labels, c)
    options = AugmentOptions() if config.augment else AugmentOptions(crop=False, jitter=False)
    state = AdamState()
    history = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        total = 0.0
        seen_pred, seen_true = [], []
        for idx in _batches(rng.permutation(len(dataset)), config.batch_size):
            seqs = [dataset[i] for i in idx]
            if options.enabled:
                seqs = [augment(s, rng, options) for s in seqs]
            frames = np.stack([s.frames for s in seqs])
            apex = [s.apex_index for s in seqs]
            with Tape() as tape:
                probs, _ = forward_batch(frames, apex, params, model_config, config.variant)
                loss = focal_loss(probs, labels[idx], config.gamma, alpha)
            grads = nx.backward(tape, loss, params.values())
            adamw_step(
                params,
                {name: grads[t] for name, t in params.items()},
                state,
                lr,
                config.beta1,
                config.beta2,
                config.eps,
                config.weight_decay,
            )
            total += loss.item() * len(idx)
            seen_pred.extend(probs.data.argmax(axis=1).tolist())
            seen_true.extend(labels[idx].tolist())
        # running metrics from the training passes themselves (pre-update weights)
        m = compute_metrics(seen_pred, seen_true, c)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss": total / len(dataset),
                "train_uf1": m.uf1,
                "train_uar": m.uar,
                "train_acc": m.acc,
            }
        )
        log.debug("epoch %d lr=%.3g loss=%.5f uf1=%.3f", epoch, lr, total / len(dataset), m.uf1)
    return TrainResult(params, history, alpha.tolist())


def evaluate(params, model_config: ModelConfig, dataset, variant: str = "full") -> Metrics:
    probs = predict(params, model_config, dataset, variant)
    return compute_metrics(probs.argmax(axis=1), [s.label for s in dataset], model_config.num_classes)


@dataclass
class FoldReport:
    subject: str
    n_test: int
    n_train: int
    test: Metrics
    train: Metrics
    predictions: list[int]
    labels: list[int]

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "n_test": self.n_test,
            "n_train": self.n_train,
            "test": self.test.to_dict(),
            "train": self.train.to_dict(),
            "predictions": self.predictions,
            "labels": self.labels,
        }


@dataclass
class EvalReport:
    folds: list[FoldReport]
    num_classes: int
    variant: str = "full"

    @property
    def subject_mean(self) -> dict:
        keys = ("uf1", "uar", "acc")
        return {k: float(np.mean([getattr(f.test, k) for f in self.folds])) for k in keys}

    @property
    def train_mean(self) -> dict:
        keys = ("uf1", "uar", "acc")
        return {k: float(np.mean([getattr(f.train, k) for f in self.folds])) for k in keys}

    @property
    def pooled(self) -> Metrics:
        preds = [p for f in self.folds for p in f.predictions]
        labels = [y for f in self.folds for y in f.labels]
        return compute_metrics(preds, labels, self.num_classes)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "num_classes": self.num_classes,
            "num_folds": len(self.folds),
            "aggregate": {
                "subject_mean": self.subject_mean,
                "pooled": self.pooled.to_dict(),
                "train_subject_mean": self.train_mean,
            },
            "folds": [f.to_dict() for f in self.folds],
        }


def _run_fold(args) -> tuple[FoldReport, list[dict]]:
    config, model_config, dataset, fold, key = args
    train_set = [dataset[i] for i in fold.train]
    test_set = [dataset[i] for i in fold.test]
    result = train(config, train_set, model_config, fold_key=key)
    test_probs = predict(result.params, model_config, test_set, config.variant)
    preds = test_probs.argmax(axis=1).tolist()
    labels = [s.label for s in test_set]
    c = model_config.num_classes
    report = FoldReport(
        subject=fold.subject,
        n_test=len(test_set),
        n_train=len(train_set),
        test=compute_metrics(preds, labels, c),
        train=evaluate(result.params, model_config, train_set, config.variant),
        predictions=preds,
        labels=labels,
    )
    log.info("fold %s: uf1=%.3f uar=%.3f", fold.subject, report.test.uf1, report.test.uar)
    return report, result.history


def run_loso(
    config: TrainConfig,
    model_config: ModelConfig,
    dataset: list[FrameSequence],
    jobs: int = 1,
) -> tuple[EvalReport, dict[str, list[dict]]]:
    """Leave-one-subject-out: a fresh model per fold, reports in subject order."""
    folds = loso_split([s.subject_id for s in dataset])
    tasks = [(config, model_config, dataset, fold, k + 1) for k, fold in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    report = EvalReport([r for r, _ in results], model_config.num_classes, config.variant)
    histories = {f.subject: h for f, (_, h) in zip(folds, results)}
    return report, histories


def train_config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    if out["alpha"] is not None:
        out["alpha"] = list(out["alpha"])
    return out
