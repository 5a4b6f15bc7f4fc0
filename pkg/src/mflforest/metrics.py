"""Evaluation metrics: accuracy, recall, ROC AUC and adjusted Rand index."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    recall: float
    auc: float
    ari: float
    n_test: int
    threshold_used: float = 0.5

    def __post_init__(self) -> None:
        for name in ("accuracy", "recall", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not -1.0 <= self.ari <= 1.0:
            raise ValueError(f"ari={self.ari} outside [-1, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a).ravel()
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(np.int64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(labels, "labels")
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(pred, truth) -> float:
    """Adjusted Rand index between two labelings.

    Returns 0 when the chance-corrected denominator vanishes, e.g. when
    both labelings put everything in one cluster.
    """
    a = np.asarray(pred).ravel()
    b = np.asarray(truth).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("ARI needs at least two samples")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(a.size)
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        return 0.0
    return float((index - expected) / denom)


def accuracy_recall(pred, truth) -> tuple:
    p = _binary(pred, "pred")
    t = _binary(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("recall is undefined without positive samples")
    acc = float(np.mean(p == t))
    rec = float(np.sum((p == 1) & (t == 1)) / n_pos)
    return acc, rec


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """All four metrics for probability-like scores; labels via ``score >= threshold``."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(labels, "labels")
    pred = (s >= threshold).astype(np.int64)
    acc, rec = accuracy_recall(pred, y)
    # clip round-off so the report invariants hold
    a = min(1.0, max(-1.0, ari(pred, y)))
    return MetricsReport(acc, rec, auc(s, y), a, int(y.size), threshold)
