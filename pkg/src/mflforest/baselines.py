"""Comparison detectors: isolation forest, k-nearest neighbours, logistic regression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset

EULER_GAMMA = 0.5772156649015329


def harmonic(i: int) -> float:
    """Exact-enough harmonic number H(i) = 1 + 1/2 + ... + 1/i."""
    if i < 1:
        return 0.0
    if i < 1000:
        return math.fsum(1.0 / k for k in range(1, i + 1))
    return math.log(i) + EULER_GAMMA + 1.0 / (2 * i) - 1.0 / (12 * i * i)


def average_path_length(psi: int) -> float:
    """c(psi): mean unsuccessful-search path length in a BST of ``psi`` keys."""
    if psi <= 1:
        return 0.0
    return 2.0 * harmonic(psi - 1) - 2.0 * (psi - 1) / psi


# --- isolation forest ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IsolationTree:
    """Pre-order arrays; external nodes have ``feature == -1`` and a ``size``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def height(self) -> int:
        depth = np.zeros(self.feature.size, dtype=np.int64)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def path_length(self, X: np.ndarray) -> np.ndarray:
        """Depth of the external node reached, plus ``c(size)`` for unsplit nodes."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        depth = np.zeros(X.shape[0])
        active = self.feature[node] >= 0
        rows = np.arange(X.shape[0])
        while np.any(active):
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] < self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            depth[r] += 1.0
            active[r] = self.feature[node[r]] >= 0
        adj = np.array([average_path_length(int(s)) for s in self.size])
        return depth + adj[node]


@dataclass(frozen=True, eq=False)
class IsoForestModel:
    trees: tuple
    subsample_size: int
    n_features: int

    @property
    def T(self) -> int:
        return len(self.trees)

    @property
    def height_limit(self) -> int:
        return max(0, math.ceil(math.log2(self.subsample_size))) if self.subsample_size > 1 else 0

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        mean_path = np.mean([t.path_length(X) for t in self.trees], axis=0)
        return anomaly_score(mean_path, self.subsample_size)


def anomaly_score(mean_path, psi: int):
    """``2 ** (-E[h] / c(psi))``; 0.5 when the mean path equals ``c(psi)``."""
    c = average_path_length(psi)
    if c == 0.0:
        return np.full_like(np.asarray(mean_path, dtype=np.float64), 0.5)
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / c)


def _grow_isolation_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature, threshold, left, right, size = [], [], [], [], []
    stack = [(np.arange(X.shape[0]), 0, -1, False)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(rows.size)
        if depth >= height_limit or rows.size <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        j = int(rng.choice(splittable))
        thr = float(rng.uniform(lo[j], hi[j]))
        if thr <= lo[j]:
            thr = float(np.nextafter(lo[j], hi[j]))
        go_left = sub[:, j] < thr
        feature[node] = j
        threshold[node] = thr
        stack.append((rows[~go_left], depth + 1, node, False))
        stack.append((rows[go_left], depth + 1, node, True))
    return IsolationTree(np.array(feature), np.array(threshold), np.array(left),
                         np.array(right), np.array(size))


def fit_iforest(d: Dataset | np.ndarray, T: int = 100, subsample_size: int = 256,
                rng_seed: int = 0) -> IsoForestModel:
    """Isolation forest on the rows of ``d`` (labels, if any, are ignored)."""
    X = d.features if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("isolation forest needs at least two samples")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    psi = min(subsample_size, n)
    limit = math.ceil(math.log2(psi))
    rng = np.random.default_rng(rng_seed)
    trees = []
    for _ in range(T):
        rows = rng.choice(n, size=psi, replace=False)
        trees.append(_grow_isolation_tree(X[rows], limit, rng))
    return IsoForestModel(tuple(trees), psi, X.shape[1])


def score_iforest(m: IsoForestModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("score_iforest takes one feature vector")
    return float(m.score(x[None, :])[0])


# --- shared standardization -------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> Standardizer:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns pass through centred
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


# --- k nearest neighbours ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KNNModel:
    """Stored training set; ``predict_proba`` is the positive share of the k nearest."""

    X: np.ndarray
    y: np.ndarray
    scaler: Standardizer
    k: int = 5

    @classmethod
    def fit(cls, train: Dataset, k: int = 5) -> KNNModel:
        if not 1 <= k <= train.n:
            raise ValueError(f"k must lie in [1, {train.n}], got {k}")
        scaler = Standardizer.fit(train.features)
        return cls(scaler(train.features), train.labels.copy(), scaler, k)

    def predict_proba(self, X, chunk: int = 512) -> np.ndarray:
        Q = self.scaler(X)
        if Q.ndim == 1:
            Q = Q[None, :]
        if Q.shape[1] != self.X.shape[1]:
            raise ValueError(f"expected {self.X.shape[1]} features, got {Q.shape[1]}")
        out = np.empty(Q.shape[0])
        sq_train = np.einsum("ij,ij->i", self.X, self.X)
        for start in range(0, Q.shape[0], chunk):
            q = Q[start:start + chunk]
            d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ self.X.T + sq_train[None, :]
            # stable sort: equal distances keep the lower training index
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            out[start:start + chunk] = self.y[nearest].mean(axis=1)
        return out


def knn_predict_proba(train: Dataset, x, k: int = 5) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("knn_predict_proba takes one feature vector")
    return float(KNNModel.fit(train, k).predict_proba(x[None, :])[0])


# --- logistic regression -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    scaler: Standardizer
    loss_history: list = field(default_factory=list)
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        Z = self.scaler(X)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[1] != self.coefficients.size:
            raise ValueError(f"expected {self.coefficients.size} features, got {Z.shape[1]}")
        return Z @ self.coefficients + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def _logistic_objective(Z, y, beta, b, l2):
    z = Z @ beta + b
    # mean negative log-likelihood, written with logaddexp for stability
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    return nll + 0.5 * l2 * float(beta @ beta)


def fit_logistic(d: Dataset, l2: float = 1e-4, max_iter: int = 1000, tol: float = 1e-6) -> LogisticModel:
    """L2-penalized logistic regression on standardized features.

    Gradient steps on the mean negative log-likelihood with backtracking, so
    the objective never increases; stops once the gradient max-norm drops
    below ``tol``.
    """
    if d.n_positive in (0, d.n):
        raise ValueError("logistic regression needs both classes")
    scaler = Standardizer.fit(d.features)
    Z = scaler(d.features)
    y = d.labels.astype(np.float64)
    n, p = Z.shape
    beta = np.zeros(p)
    b = 0.0
    obj = _logistic_objective(Z, y, beta, b, l2)
    history = [obj]
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        r = expit(Z @ beta + b) - y
        g_beta = Z.T @ r / n + l2 * beta
        g_b = float(r.mean())
        gnorm = max(float(np.max(np.abs(g_beta))) if p else 0.0, abs(g_b))
        if gnorm < tol:
            break
        step = min(step * 2.0, 1e3)
        gg = float(g_beta @ g_beta) + g_b * g_b
        while True:
            nb, nbias = beta - step * g_beta, b - step * g_b
            new = _logistic_objective(Z, y, nb, nbias, l2)
            if new <= obj - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        if new > obj:
            break
        beta, b, obj = nb, nbias, new
        history.append(obj)
    return LogisticModel(beta, float(b), scaler, history, it)
