"""Classification metrics: accuracy, per-class recall/precision/F1, one-vs-rest ROC/AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricsBundle:
    accuracy: float
    recall: list[float]
    precision: list[float]
    f1: list[float]
    support: list[int]
    confusion: list[list[int]]
    ovr_auc: list[float]
    roc_points: list[list[tuple[float, float, float]]] = field(repr=False)
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "class_names": self.class_names,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "support": self.support,
            "support_zero": [s == 0 for s in self.support],
            "confusion": self.confusion,
            "ovr_auc": self.ovr_auc,
        }

    def write_roc_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "fpr", "tpr", "threshold"])
            for name, points in zip(self.class_names, self.roc_points):
                for fpr, tpr, thr in points:
                    w.writerow([name, repr(fpr), repr(tpr), repr(thr)])
        return path


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def roc_curve(is_pos: np.ndarray, scores: np.ndarray) -> list[tuple[float, float, float]]:
    """ROC points at every distinct score, descending, starting from (0, 0, +inf).

    Tied scores move in one diagonal step, which is what makes the trapezoid
    area agree with the rank-average AUC.
    """
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    points = [(0.0, 0.0, float("inf"))]
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = is_pos[order]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(p[i:j].sum())
        fp += int((~p[i:j]).sum())
        points.append((_safe_div(fp, n_neg), _safe_div(tp, n_pos), float(s[i])))
        i = j
    return points


def rank_auc(is_pos: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties; 0.5 when a side is empty."""
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[is_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def trapezoid_auc(points: Sequence[tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def compute_metrics(y_true: Sequence[int], probabilities: np.ndarray, n_classes: int | None = None,
                    class_names: Sequence[str] | None = None) -> MetricsBundle:
    """Metrics from 0-based labels and per-class probability rows.

    Predictions are the row argmax. Ratios with a zero denominator are 0; a
    class with no support is flagged in ``support_zero`` of the JSON form.
    """
    y = np.asarray(y_true, dtype=np.int64)
    P = np.asarray(probabilities, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != y.size:
        raise ValueError(f"{y.size} labels but probabilities of shape {P.shape}")
    n_classes = n_classes or P.shape[1]
    if P.shape[1] != n_classes:
        raise ValueError(f"probability rows have {P.shape[1]} columns, expected {n_classes}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError("label outside class range")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        bad = int(np.flatnonzero((P < 0).any(axis=1) | ~np.isclose(P.sum(axis=1), 1.0, atol=1e-9))[0])
        raise ValueError(f"invalid probability row {bad}")
    class_names = list(class_names) if class_names is not None else [str(i) for i in range(n_classes)]

    pred = P.argmax(axis=1)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    tp = np.diag(conf)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    recall = [_safe_div(tp[c], support[c]) for c in range(n_classes)]
    precision = [_safe_div(tp[c], predicted[c]) for c in range(n_classes)]
    f1 = [_safe_div(2 * tp[c], support[c] + predicted[c]) for c in range(n_classes)]
    aucs, rocs = [], []
    for c in range(n_classes):
        is_pos = y == c
        aucs.append(rank_auc(is_pos, P[:, c]))
        rocs.append(roc_curve(is_pos, P[:, c]))
    return MetricsBundle(
        accuracy=_safe_div(int(tp.sum()), y.size),
        recall=[float(v) for v in recall],
        precision=[float(v) for v in precision],
        f1=[float(v) for v in f1],
        support=[int(s) for s in support],
        confusion=conf.tolist(),
        ovr_auc=aucs,
        roc_points=rocs,
        class_names=class_names,
    )
