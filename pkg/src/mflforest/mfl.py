"""Mallows-like focal loss criterion and simplex-constrained weight search.

For a prediction matrix ``P`` (n samples x M models), weights ``w`` on the
unit simplex and pointwise loss ``L``::

    f    = P @ w
    S(w) = sum_i L(y_i, f_i)
    C(w) = S(w) + 2 * sigma2(w) * (1 + sum_m w_m k_m),   sigma2(w) = S(w) / n

so that ``C(w) = S(w) * (1 + 2 * (1 + k @ w) / n)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .loss import LossSpec, loss_grads, losses

logger = logging.getLogger(__name__)

PENALTIES = ("plugin", "frozen", "none")


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-model probabilities on a fixed sample, plus model complexities."""

    values: np.ndarray
    labels: np.ndarray
    complexities: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.float64).ravel()
        comp = np.array(self.complexities, dtype=np.float64).ravel()
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        n, m = values.shape
        if n < 1 or m < 1:
            raise ValueError("prediction matrix needs at least one row and one column")
        if labels.shape[0] != n:
            raise ValueError(f"{labels.shape[0]} labels for {n} rows")
        if comp.shape[0] != m:
            raise ValueError(f"{comp.shape[0]} complexities for {m} columns")
        if np.any(~np.isfinite(values)) or np.any((values < 0.0) | (values > 1.0)):
            raise ValueError("prediction entries must lie in [0, 1]")
        if np.any((labels != 0.0) & (labels != 1.0)):
            raise ValueError("labels must be 0 or 1")
        if np.any(comp < 0) or np.any(~np.isfinite(comp)):
            raise ValueError("complexities must be finite and non-negative")
        for arr in (values, labels, comp):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "complexities", comp)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]


def check_weights(w, M: int | None = None, atol: float = 1e-9) -> np.ndarray:
    """Validate a simplex weight vector and return it as a float array."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if M is not None and w.shape[0] != M:
        raise ValueError(f"expected {M} weights, got {w.shape[0]}")
    if np.any(~np.isfinite(w)) or np.any(w < -1e-12) or np.any(w > 1.0 + atol):
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return np.clip(w, 0.0, 1.0)


def uniform_weights(M: int) -> np.ndarray:
    return np.full(M, 1.0 / M)


def ensemble_prob(pm: PredictionMatrix, w, i: int) -> float:
    w = check_weights(w, pm.M)
    if not 0 <= i < pm.n:
        raise IndexError(f"row {i} out of range for n={pm.n}")
    return float(min(1.0, max(0.0, pm.values[i] @ w)))


def _blend(pm: PredictionMatrix, w: np.ndarray) -> np.ndarray:
    # round-off can push a convex combination a hair outside [0, 1]
    return np.clip(pm.values @ w, 0.0, 1.0)


def sample_loss(pm: PredictionMatrix, w, spec: LossSpec) -> float:
    """Total pointwise loss of the blended predictions."""
    w = check_weights(w, pm.M)
    return float(losses(spec, pm.labels, _blend(pm, w), check=False).sum())


def sigma_hat(pm: PredictionMatrix, w, spec: LossSpec) -> float:
    """Plug-in variance: mean pointwise loss at the blended predictions."""
    return sample_loss(pm, w, spec) / pm.n


class Criterion:
    """Callable objective ``C(w)`` with its gradient, for a fixed matrix and loss.

    ``penalty`` selects how the complexity term is built:

    * ``"plugin"``: sigma2 recomputed at every ``w`` (default).
    * ``"frozen"``: sigma2 held at its value at ``sigma_at``.
    * ``"none"``: the bare loss sum ``S(w)``.

    Unlike the module-level functions, the methods here do not insist on
    ``sum(w) == 1``; they evaluate the smooth extension of ``C`` so that
    finite differences along coordinate axes are meaningful.
    """

    def __init__(self, pm: PredictionMatrix, spec: LossSpec, penalty: str = "plugin",
                 sigma_at=None):
        if penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
        self.pm = pm
        self.spec = spec
        self.penalty = penalty
        self._P = pm.values
        self._y = pm.labels
        self._k = pm.complexities
        self._n = float(pm.n)
        self.sigma2 = None
        if penalty == "frozen":
            w0 = uniform_weights(pm.M) if sigma_at is None else check_weights(sigma_at, pm.M)
            self.sigma2 = self.loss_sum(w0) / self._n

    def blend(self, w: np.ndarray) -> np.ndarray:
        return np.clip(self._P @ w, 0.0, 1.0)

    def loss_sum(self, w: np.ndarray) -> float:
        return float(losses(self.spec, self._y, self.blend(w), check=False).sum())

    def value_from_sum(self, s: float, w: np.ndarray) -> float:
        if self.penalty == "none":
            return s
        cplx = 1.0 + float(self._k @ w)
        if self.penalty == "plugin":
            return s * (1.0 + 2.0 * cplx / self._n)
        return s + 2.0 * self.sigma2 * cplx

    def __call__(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return self.value_from_sum(self.loss_sum(w), w)

    def grad(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        f = self._P @ w
        g_f = loss_grads(self.spec, self._y, f, check=False)
        dS = self._P.T @ g_f
        if self.penalty == "none":
            return dS
        if self.penalty == "frozen":
            return dS + 2.0 * self.sigma2 * self._k
        s = float(losses(self.spec, self._y, np.clip(f, 0.0, 1.0), check=False).sum())
        cplx = 1.0 + float(self._k @ w)
        return dS * (1.0 + 2.0 * cplx / self._n) + s * (2.0 * self._k / self._n)


def criterion(pm: PredictionMatrix, w, spec: LossSpec, penalty: str = "plugin") -> float:
    """Penalized criterion ``C(w)``.

    Examples:
        With ``n=10``, ``k=(3, 5)``, ``w=(0.5, 0.5)`` and ``S(w)=2``, sigma2 is
        0.2 and ``C = 2 + 2 * 0.2 * (1 + 4) = 4``.
    """
    w = check_weights(w, pm.M)
    return Criterion(pm, spec, penalty)(w)


def criterion_grad(pm: PredictionMatrix, w, spec: LossSpec, penalty: str = "plugin") -> np.ndarray:
    """Gradient of ``C`` with respect to ``w`` (unconstrained partials)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (pm.M,):
        raise ValueError(f"expected {pm.M} weights, got shape {w.shape}")
    return Criterion(pm, spec, penalty).grad(w)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size < 1:
        raise ValueError("cannot project an empty vector")
    if np.any(~np.isfinite(v)):
        raise ValueError("vector must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    # renormalize away the last ulp of drift
    return w / w.sum()


@dataclass
class OptimizeResult:
    weights: np.ndarray
    value: float
    iterations: int
    history: list  # one criterion trace per search run
    source: str


def _pgd(crit: Criterion, w0: np.ndarray, budget: int, tol: float):
    """Projected gradient descent with monotone Armijo backtracking.

    Trial steps start from the Barzilai-Borwein length (the first one from
    ``1 / max|g|``) and are halved until the Armijo condition holds on the
    projected arc. Both choices are invariant to a positive rescaling of the
    objective, so ``c * C`` and ``C`` produce identical iterates.
    """
    w = w0.copy()
    c = crit(w)
    history = [c]
    g = crit.grad(w)
    # shifting g by a constant leaves the simplex projection unchanged
    g = g - g.mean()
    gmax = np.max(np.abs(g))
    if not np.isfinite(gmax) or gmax == 0.0:
        return w, c, 0, history
    alpha = 1.0 / gmax
    it = 0
    for it in range(1, budget + 1):
        step = alpha
        accepted = False
        for _ in range(60):
            w_new = project_simplex(w - step * g)
            c_new = crit(w_new)
            if c_new <= c + 1e-4 * float(g @ (w_new - w)) and c_new <= c:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        g_new = crit.grad(w_new)
        g_new = g_new - g_new.mean()
        s_vec = w_new - w
        y_vec = g_new - g
        decrease = c - c_new
        w, c, g = w_new, c_new, g_new
        history.append(c)
        gmax = np.max(np.abs(g))
        if c == 0.0 or gmax == 0.0 or not np.any(s_vec):
            break
        if decrease <= tol * abs(c):
            # confirm with a full gradient-mapping step before stopping
            probe = project_simplex(w - g / abs(c))
            if np.max(np.abs(probe - w)) <= 1e-7:
                break
        sy = float(s_vec @ y_vec)
        ss = float(s_vec @ s_vec)
        alpha = ss / sy if sy > 0.0 else 1.0 / gmax
        # keep the trial step within a scale-free range
        alpha = min(max(alpha, 1e-12 / gmax), 1e12 / gmax)
    return w, c, it, history


def _pairwise_search(crit: Criterion, w0: np.ndarray, budget: int,
                     step_max: float = 0.25, step_min: float = 1e-4):
    """Derivative-free descent by moving mass between pairs of weights.

    For each step size (halved from ``step_max`` to ``step_min``), sweeps all
    ordered pairs (i, j) and moves ``min(step, w_i)`` from i to j whenever
    that strictly lowers the criterion.
    """
    P = crit._P
    w = w0.copy()
    f = P @ w
    c = crit(w)
    history = [c]
    M = w.size
    step = step_max
    sweeps = 0
    while step >= step_min and sweeps < budget:
        improved = True
        while improved and sweeps < budget:
            improved = False
            sweeps += 1
            for i in range(M):
                for j in range(M):
                    if i == j or w[i] <= 0.0:
                        continue
                    t = min(step, w[i])
                    w_try = w.copy()
                    w_try[i] -= t
                    w_try[j] += t
                    f_try = f + t * (P[:, j] - P[:, i])
                    s = float(losses(crit.spec, crit._y, np.clip(f_try, 0.0, 1.0), check=False).sum())
                    c_try = crit.value_from_sum(s, w_try)
                    if c_try < c:
                        w, f, c = w_try, f_try, c_try
                        history.append(c)
                        improved = True
        step *= 0.5
    # mass moves are exact up to round-off, so no renormalization: it could
    # nudge a blended prediction across the 0.5 threshold
    return np.clip(w, 0.0, None), c, sweeps, history


def _start_pool(M: int, size: int = 256, seed: int = 0, pm: PredictionMatrix | None = None) -> np.ndarray:
    """Starting points for the derivative-free search.

    A full lattice of step 0.01 when ``M <= 3`` (for ``M == 2`` also every
    weight at which a blended prediction crosses the 0.5 threshold),
    otherwise a fixed-seed Dirichlet(1) sample.
    """
    if M == 2:
        a = np.arange(101) / 100.0
        if pm is not None:
            # weights where some blended prediction crosses 0.5, and either side
            p1, p2 = pm.values[:, 0], pm.values[:, 1]
            diff = p1 - p2
            with np.errstate(divide="ignore", invalid="ignore"):
                cross = (0.5 - p2) / diff
            cross = cross[np.isfinite(cross) & (cross >= 0.0) & (cross <= 1.0)]
            delta = 1e-12
            a = np.concatenate([a, cross, cross - delta, cross + delta])
            a = np.unique(np.clip(a, 0.0, 1.0))
        return np.column_stack([a, 1.0 - a])
    if M == 3:
        pts = [(a, b, 100 - a - b) for a in range(101) for b in range(101 - a)]
        return np.array(pts, dtype=np.float64) / 100.0
    return np.random.default_rng(seed).dirichlet(np.ones(M), size=size)


def optimize_weights(pm: PredictionMatrix, spec: LossSpec, init=None, budget: int = 500,
                     tol: float = 1e-8, penalty: str = "plugin",
                     return_result: bool = False, n_starts: int = 3):
    """Minimize the criterion over the unit simplex.

    Differentiable losses use projected gradient descent started from both
    ``init`` and the best vertex; step losses use a pairwise mass-transfer
    search started from ``init``, the best vertex and the ``n_starts`` best
    points of a fixed starting pool. Whatever the search returns, the result is never worse than
    ``init`` or any vertex ``e_m``: those candidates are always evaluated.

    Args:
        pm: prediction matrix on the fitting sample.
        spec: pointwise loss.
        init: starting weights; uniform when omitted.
        budget: iteration cap (PGD steps or pairwise sweeps).
        tol: stop when a step lowers ``C`` by less than ``tol * |C|``.
        penalty: ``"plugin"``, ``"frozen"`` (sigma2 fixed at ``init``) or ``"none"``.
        return_result: return an :class:`OptimizeResult` instead of bare weights.
    """
    M = pm.M
    w0 = uniform_weights(M) if init is None else check_weights(init, M)
    crit = Criterion(pm, spec, penalty, sigma_at=w0)

    vertex_values = np.array([crit(e) for e in np.eye(M)])
    best_vertex = int(np.argmin(vertex_values))
    candidates = [(crit(w0), w0, "init"),
                  (float(vertex_values[best_vertex]), np.eye(M)[best_vertex], "vertex")]
    if M == 1:
        w = np.ones(1)
        res = OptimizeResult(w, crit(w), 0, [[crit(w)]], "init")
        return res if return_result else w

    iterations = 0
    history: list = []
    if spec.differentiable:
        starts = [(w0, "pgd"), (np.eye(M)[best_vertex], "pgd_vertex")]
        for start, label in starts:
            w, c, it, hist = _pgd(crit, start, budget, tol)
            iterations += it
            history.append(hist)
            candidates.append((c, w, label))
    else:
        # piecewise-constant objective: seed the local search from a pool
        pool = _start_pool(M, pm=pm)
        S = losses(spec, pm.labels[:, None], np.clip(pm.values @ pool.T, 0.0, 1.0),
                   check=False).sum(axis=0)
        pool_values = np.array([crit.value_from_sum(s, p) for s, p in zip(S, pool)])
        order = np.argsort(pool_values, kind="stable")[:n_starts]
        starts = [w0, np.eye(M)[best_vertex]] + [pool[j] for j in order]
        for start in starts:
            w, c, it, hist = _pairwise_search(crit, start, budget)
            iterations += it
            history.append(hist)
            candidates.append((c, w, "pairwise"))

    # re-score so every candidate is judged by the same evaluation;
    # first minimum wins, so ties keep the earlier (simpler) candidate
    candidates = [(crit(w), w, label) for _, w, label in candidates]
    c_best, w_best, source = min(candidates, key=lambda t: t[0])
    logger.debug("optimize_weights: C=%.6g from %s after %d iterations", c_best, source, iterations)
    w_best = np.array(w_best, dtype=np.float64)
    if return_result:
        return OptimizeResult(w_best, float(c_best), iterations, history, source)
    return w_best
