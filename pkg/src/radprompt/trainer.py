"""SGD training of the prompt head and the stratified cross-validation driver."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import FrozenTextEncoder
from .metrics import MetricsBundle, compute_metrics
from .prompt_head import DECAYED, PromptHeadParams, classify, init_params, loss_and_grads, save_checkpoint
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

SWEEP_GRID = (10, 20, 30, 40, 50, 60, 70)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-7
    epochs: int = 200
    batch_size: int = 32
    folds: int = 5
    seed: int = 0
    M: int = 50
    tau: float = 0.07
    d_t: int = 32
    metanet_hidden: int | None = None
    context_std: float = 0.02
    text_hidden: int = 64
    text_gain: float = 1.0
    encoder_seed: int = 1234
    class_token_seed: int = 4321
    clip: float = 5.0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.M < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("M, epochs and batch_size must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> tuple[TrainConfig, dict]:
    """Read a JSON run config; returns the training config and the ``filters`` block."""
    raw = json.loads(Path(path).read_text())
    filters = raw.pop("filters", {})
    return TrainConfig.from_dict(raw), filters


def cosine_lr(t: int, T: int, lr0: float) -> float:
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


def sgd_step(params: PromptHeadParams, grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
             config: TrainConfig, lr: float) -> tuple[PromptHeadParams, dict[str, np.ndarray]]:
    """Heavy-ball SGD: ``v <- mu v + g + wd * theta``; ``theta <- theta - lr v``.

    Weight decay applies to the context tokens and the MetaNet weight
    matrices, not to biases.
    """
    new_params = {}
    new_velocity = {}
    for name, theta in params.arrays().items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        if name in DECAYED and config.weight_decay:
            g = g + config.weight_decay * theta
        v = config.momentum * velocity.get(name, 0.0) + g
        new_velocity[name] = v
        new_params[name] = theta - lr * v
    return PromptHeadParams(**new_params, tau=params.tau), new_velocity


def stratified_folds(labels: Sequence[int], k: int, seed: int) -> list[np.ndarray]:
    """Split indices into k folds with per-class counts within one of n_c / k.

    Each class is shuffled with its own sub-seed and dealt round-robin; the
    starting fold for each class continues where the previous class stopped so
    fold sizes stay balanced too.
    """
    labels = np.asarray(labels)
    folds: list[list[int]] = [[] for _ in range(k)]
    start = 0
    for ci, cls in enumerate(np.unique(labels)):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ValueError(f"class {cls} has {members.size} members, fewer than k={k}")
        order = members[Rng(derive_seed(seed, ci)).permutation(members.size)]
        for j, idx in enumerate(order):
            folds[(start + j) % k].append(int(idx))
        start = (start + members.size) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass
class Standardizer:
    """Per-feature z-score with statistics from the training rows, clipped."""

    mean: np.ndarray
    std: np.ndarray
    clip: float = 5.0

    @classmethod
    def fit(cls, R: np.ndarray, clip: float = 5.0) -> "Standardizer":
        mean = R.mean(axis=0)
        std = R.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std, clip)

    def transform(self, R: np.ndarray) -> np.ndarray:
        return np.clip((R - self.mean) / self.std, -self.clip, self.clip)


def build_encoder(config: TrainConfig, d_e: int, d_t: int | None = None) -> FrozenTextEncoder:
    return FrozenTextEncoder(config.encoder_seed, d_t or config.d_t, config.text_hidden, d_e, gain=config.text_gain)


def train_head(x: np.ndarray, r: np.ndarray, y: np.ndarray, encoder: FrozenTextEncoder, class_tokens: np.ndarray,
               config: TrainConfig, stream: int = 0) -> tuple[PromptHeadParams, list[float]]:
    """Train on already-normalized radiomics; returns parameters and per-epoch mean loss."""
    n = len(y)
    params = init_params(r.shape[1], class_tokens.shape[1], config.M, config.metanet_hidden, config.tau,
                         seed=derive_seed(config.seed, 100 + stream), context_std=config.context_std)
    shuffle = Rng(derive_seed(config.seed, 200 + stream))
    n_batches = math.ceil(n / config.batch_size)
    total = config.epochs * n_batches
    velocity: dict[str, np.ndarray] = {}
    losses = []
    step = 0
    for _ in range(config.epochs):
        order = shuffle.permutation(n)
        epoch_loss = 0.0
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            loss, grads = loss_and_grads(params, x[idx], r[idx], y[idx], encoder, class_tokens)
            params, velocity = sgd_step(params, grads, velocity, config, cosine_lr(step, total, config.lr0))
            epoch_loss += loss * idx.size
            step += 1
        losses.append(epoch_loss / n)
    return params, losses


def predict_proba(params: PromptHeadParams, x: np.ndarray, r: np.ndarray, encoder: FrozenTextEncoder,
                  class_tokens: np.ndarray) -> np.ndarray:
    return classify(params, x, encoder, class_tokens, r).probabilities


@dataclass
class FoldResult:
    fold: int
    losses: list[float]
    metrics: MetricsBundle
    train_ids: list[str]
    test_ids: list[str]
    normalizer_ids: list[str]
    checkpoint: str | None = None
    probabilities: np.ndarray | None = field(default=None, repr=False)


@dataclass
class CVResult:
    folds: list[FoldResult]
    config: TrainConfig

    @property
    def accuracies(self) -> list[float]:
        return [f.metrics.accuracy for f in self.folds]

    def aggregate(self) -> dict:
        acc = np.array(self.accuracies)
        per_class = {}
        for key in ("recall", "precision", "f1", "ovr_auc"):
            per_class[key] = np.mean([getattr(f.metrics, key) for f in self.folds], axis=0).tolist()
        return {
            "n_folds": len(self.folds),
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "fold_accuracies": acc.tolist(),
            "per_class_mean": per_class,
            "config": self.config.to_dict(),
        }


def run_cv(ids: Sequence[str], labels: np.ndarray, x: np.ndarray, R: np.ndarray, class_tokens: np.ndarray,
           config: TrainConfig, out_dir=None, only_folds: Sequence[int] | None = None,
           class_names: Sequence[str] | None = None) -> CVResult:
    """Stratified k-fold training and held-out evaluation.

    ``x`` holds pooled image embeddings and ``R`` raw radiomics rows, both
    aligned with ``ids``. Normalization statistics are fitted on each
    training split only.
    """
    ids = list(ids)
    labels = np.asarray(labels, dtype=np.int64)
    if not (len(ids) == len(labels) == x.shape[0] == R.shape[0]):
        raise ValueError("ids, labels, embeddings and radiomics must be aligned")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate nodule ids")
    encoder = build_encoder(config, x.shape[1], class_tokens.shape[1])
    folds = stratified_folds(labels, config.folds, config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    results = []
    for k, test_idx in enumerate(folds):
        if only_folds is not None and k not in only_folds:
            continue
        if test_idx.size == 0:
            raise ValueError(f"fold {k} is empty")
        train_idx = np.setdiff1d(np.arange(len(ids)), test_idx)
        norm = Standardizer.fit(R[train_idx], config.clip)
        params, losses = train_head(x[train_idx], norm.transform(R[train_idx]), labels[train_idx], encoder,
                                    class_tokens, config, stream=k)
        probs = predict_proba(params, x[test_idx], norm.transform(R[test_idx]), encoder, class_tokens)
        metrics = compute_metrics(labels[test_idx], probs, n_classes=class_tokens.shape[0], class_names=class_names)
        log.info("fold %d: accuracy %.4f, final loss %.4f", k, metrics.accuracy, losses[-1])
        result = FoldResult(k, losses, metrics, [ids[i] for i in train_idx], [ids[i] for i in test_idx],
                            [ids[i] for i in train_idx], probabilities=probs)
        if out_dir is not None:
            result.checkpoint = str(_write_fold(out_dir, result, params, norm, encoder, config, class_tokens))
        results.append(result)
    cv = CVResult(results, config)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "aggregate.json").write_text(json.dumps(cv.aggregate(), indent=2, sort_keys=True) + "\n")
    return cv


def _write_fold(out_dir: Path, result: FoldResult, params: PromptHeadParams, norm: Standardizer,
                encoder: FrozenTextEncoder, config: TrainConfig, class_tokens: np.ndarray) -> Path:
    fold_dir = out_dir / f"fold{result.fold}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(
        fold_dir / "checkpoint", params,
        extra_header={"seed": config.seed, "fold": result.fold, "encoder": encoder.config(),
                      "clip": norm.clip, "test_ids": result.test_ids, "config": config.to_dict()},
        extra_arrays={"norm_mean": norm.mean, "norm_std": norm.std, "class_tokens": class_tokens},
    )
    (fold_dir / "metrics.json").write_text(json.dumps(result.metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    (fold_dir / "losses.json").write_text(json.dumps(result.losses) + "\n")
    result.metrics.write_roc_csv(fold_dir / "roc.csv")
    return ckpt


def sweep(ids, labels, x, R, class_tokens, config: TrainConfig, grid: Sequence[int] = SWEEP_GRID,
          fold: int = 0) -> list[dict]:
    """Held-out accuracy on one fold for each context-token count in ``grid``."""
    rows = []
    for M in grid:
        cfg = dataclasses.replace(config, M=int(M))
        cv = run_cv(ids, labels, x, R, class_tokens, cfg, only_folds=[fold])
        rows.append({"M": int(M), "fold": fold, "accuracy": cv.folds[0].metrics.accuracy})
    return rows


def write_sweep_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["M,fold,accuracy"] + [f"{r['M']},{r['fold']},{r['accuracy']!r}" for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path
