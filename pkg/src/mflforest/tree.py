"""CART classification trees used as the forest's base models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset

LEAF = -1
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TreeParams:
    """Growth controls. ``max_features=None`` means ``floor(sqrt(p))``."""

    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | None = None

    def __post_init__(self) -> None:
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError(f"max_features must be >= 1, got {self.max_features}")

    def resolve_max_features(self, p: int) -> int:
        mf = max(1, math.isqrt(p)) if self.max_features is None else self.max_features
        if mf > p:
            raise ValueError(f"max_features={mf} exceeds p={p}")
        return mf


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Binary tree stored as parallel arrays in pre-order.

    Internal nodes have ``feature >= 0`` and send ``x[feature] <= threshold``
    to ``left``. Leaves have ``feature == -1`` and carry the fraction of
    positive training samples that reached them.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    n_features: int

    def __post_init__(self) -> None:
        for name in ("feature", "threshold", "left", "right", "value", "n_samples"):
            getattr(self, name).setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    @property
    def leaf_count(self) -> int:
        return int(np.count_nonzero(self.feature == LEAF))

    @property
    def internal_count(self) -> int:
        return self.node_count - self.leaf_count

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while np.any(active):
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def bootstrap_sample(n: int, rng_seed: int) -> np.ndarray:
    """``n`` indices drawn uniformly with replacement from ``range(n)``."""
    if n < 1:
        raise ValueError("cannot bootstrap an empty dataset")
    return np.random.default_rng(rng_seed).integers(0, n, size=n)


def _gini(pos, total):
    q = pos / total
    return 2.0 * q * (1.0 - q)


def _best_split(x: np.ndarray, y: np.ndarray, parent_impurity: float, min_leaf: int):
    """Best midpoint split of one feature: (gain, threshold) or None."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cum_pos = np.cumsum(y[order])
    total_pos = cum_pos[-1]
    n_left = np.arange(1, n)
    ok = xs[:-1] < xs[1:]
    ok &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not np.any(ok):
        return None
    nl = n_left[ok].astype(np.float64)
    pl = cum_pos[:-1][ok].astype(np.float64)
    nr = n - nl
    pr = total_pos - pl
    weighted = (nl * _gini(pl, nl) + nr * _gini(pr, nr)) / n
    gain = parent_impurity - weighted
    j = int(np.argmax(gain))
    pos = np.flatnonzero(ok)[j]
    lo, hi = xs[pos], xs[pos + 1]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        # adjacent floats: the midpoint rounds onto hi
        thr = lo
    return float(gain[j]), float(thr)


def fit_tree(d: Dataset, indices, params: TreeParams = TreeParams(), rng_seed: int = 0) -> TreeModel:
    """Grow a tree greedily on ``d`` restricted to ``indices`` (repeats allowed).

    Each node draws a fresh random subset of ``max_features`` features and
    takes the split with the largest Gini decrease among them; ties go to
    the lower feature index, then the lower threshold. A node becomes a leaf
    when pure, at ``max_depth``, when every admissible split would leave a
    child under ``min_samples_leaf``, or when no split lowers impurity.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot fit a tree on zero samples")
    X = d.features[idx]
    y = d.labels[idx].astype(np.float64)
    p = d.p
    mf = params.resolve_max_features(p)
    rng = np.random.default_rng(rng_seed)

    feature, threshold, left, right, value, counts = [], [], [], [], [], []
    # (rows, depth, parent, is_left); right pushed first so left is emitted first
    stack = [(np.arange(X.shape[0]), 0, -1, False)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        yr = y[rows]
        n_node = rows.shape[0]
        n_pos = float(yr.sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(n_pos / n_node)
        counts.append(n_node)

        if n_pos == 0.0 or n_pos == n_node:
            continue
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        if n_node < 2 * params.min_samples_leaf:
            continue
        parent_imp = _gini(n_pos, n_node)
        cand = np.sort(rng.choice(p, size=mf, replace=False))
        best = None
        for j in cand:
            res = _best_split(X[rows, j], yr, parent_imp, params.min_samples_leaf)
            if res is not None and res[0] > MIN_GAIN and (best is None or res[0] > best[0]):
                best = (res[0], res[1], int(j))
        if best is None:
            continue
        _, thr, j = best
        feature[node] = j
        threshold[node] = thr
        go_left = X[rows, j] <= thr
        stack.append((rows[~go_left], depth + 1, node, False))
        stack.append((rows[go_left], depth + 1, node, True))

    return TreeModel(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(counts, dtype=np.int64),
        n_features=p,
    )


def predict_proba_tree(t: TreeModel, x) -> float:
    """Positive fraction of the leaf that the single feature vector ``x`` reaches."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_proba_tree takes one feature vector")
    return float(t.predict_proba(x[None, :])[0])


def complexity(t: TreeModel, mode: str = "leaves") -> int:
    """Tree size entering the penalty: leaf count or internal-node count."""
    if mode == "leaves":
        return t.leaf_count
    if mode == "internal":
        return t.internal_count
    raise ValueError(f"mode must be 'leaves' or 'internal', got {mode!r}")
