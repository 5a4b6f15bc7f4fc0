"""Hyperparameter search over (alpha, gamma, M) for the weighted forest."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .data import DataError, Dataset, train_test_split
from .ensemble import FitConfig, derive_seed, fit_mfl_forest
from .loss import LossSpec
from .metrics import accuracy_recall, auc

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = (0.95, 2.0, 20)


@dataclass(frozen=True)
class SearchSpace:
    alpha_range: tuple = (0.5, 0.99)
    gamma_range: tuple = (0.0, 5.0)
    M_range: tuple = (10, 200)
    budget: int = 20

    def __post_init__(self) -> None:
        (a0, a1), (g0, g1), (m0, m1) = self.alpha_range, self.gamma_range, self.M_range
        if not (0.0 < a0 <= a1 < 1.0):
            raise ValueError(f"alpha_range must satisfy 0 < lo <= hi < 1, got {self.alpha_range}")
        if not (0.0 <= g0 <= g1):
            raise ValueError(f"gamma_range must satisfy 0 <= lo <= hi, got {self.gamma_range}")
        if not (1 <= m0 <= m1):
            raise ValueError(f"M_range must satisfy 1 <= lo <= hi, got {self.M_range}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")

    @property
    def finite(self) -> bool:
        return self.alpha_range[0] == self.alpha_range[1] and self.gamma_range[0] == self.gamma_range[1]

    @property
    def cardinality(self) -> float:
        if not self.finite:
            return float("inf")
        return self.M_range[1] - self.M_range[0] + 1

    def clip(self, alpha: float, gamma: float, M: int) -> tuple:
        return (float(np.clip(alpha, *self.alpha_range)),
                float(np.clip(gamma, *self.gamma_range)),
                int(np.clip(M, *self.M_range)))

    def _unit(self, params) -> np.ndarray:
        lo = np.array([self.alpha_range[0], self.gamma_range[0], self.M_range[0]], dtype=float)
        hi = np.array([self.alpha_range[1], self.gamma_range[1], self.M_range[1]], dtype=float)
        span = np.where(hi > lo, hi - lo, 1.0)
        return (np.asarray(params, dtype=float) - lo) / span

    def sample(self, rng: np.random.Generator) -> tuple:
        return (float(rng.uniform(*self.alpha_range)),
                float(rng.uniform(*self.gamma_range)),
                int(rng.integers(self.M_range[0], self.M_range[1] + 1)))


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    alpha: float
    gamma: float
    M: int
    validation_auc: float
    seconds: float = field(compare=False)

    @property
    def params(self) -> tuple:
        return (self.alpha, self.gamma, self.M)


@dataclass
class TuneResult:
    best: tuple
    best_score: float
    trials: list

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "alpha", "gamma", "M", "val_auc", "seconds"])
            for t in self.trials:
                w.writerow([t.trial, repr(t.alpha), repr(t.gamma), t.M,
                            repr(t.validation_auc), f"{t.seconds:.6f}"])


class _GP:
    """Tiny Gaussian-process regressor (RBF kernel) for expected improvement."""

    def __init__(self, X, y, length_scale=0.25, noise=1e-4):
        self.X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mu = y.mean()
        self.sd = y.std() if y.std() > 0 else 1.0
        self.ls = length_scale
        K = self._k(self.X, self.X) + noise * np.eye(len(self.X))
        self.L = np.linalg.cholesky(K)
        self.alpha = np.linalg.solve(self.L.T, np.linalg.solve(self.L, (y - self.mu) / self.sd))

    def _k(self, A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / self.ls**2)

    def predict(self, Xs):
        Ks = self._k(np.asarray(Xs, dtype=float), self.X)
        mean = Ks @ self.alpha
        v = np.linalg.solve(self.L, Ks.T)
        var = np.clip(1.0 - (v**2).sum(0), 1e-12, None)
        return self.mu + self.sd * mean, self.sd * np.sqrt(var)


def _expected_improvement(mean, sd, best, xi=0.01):
    z = (mean - best - xi) / sd
    return (mean - best - xi) * norm.cdf(z) + sd * norm.pdf(z)


def _propose(space: SearchSpace, rng: np.random.Generator, history, strategy: str,
             n_init: int, seen: set):
    if strategy == "ei" and len(history) >= n_init:
        pool = [space.sample(rng) for _ in range(512)]
        gp = _GP([space._unit(p) for p, _ in history], [s for _, s in history])
        mean, sd = gp.predict([space._unit(p) for p in pool])
        order = np.argsort(-_expected_improvement(mean, sd, max(s for _, s in history)), kind="stable")
        for j in order:
            if pool[j] not in seen:
                return pool[j]
    for _ in range(10_000):
        cand = space.sample(rng)
        if cand not in seen:
            return cand
    raise RuntimeError("search space exhausted")


def tune(train: Dataset, space: SearchSpace = SearchSpace(), rng_seed: int = 0,
         strategy: str = "random", metric: str = "auc", base_cfg: FitConfig | None = None,
         n_init: int = 5) -> TuneResult:
    """Search (alpha, gamma, M), scoring each candidate on a held-out 20% fold.

    Trial 1 is always alpha=0.95, gamma=2, M=20 (clipped into the space).
    Later trials come from uniform random sampling, or from expected
    improvement under a Gaussian-process surrogate when ``strategy="ei"``.
    Every trial grows its forest from the same seed. The best trial is the
    first one reaching the maximum score.
    """
    if strategy not in ("random", "ei"):
        raise ValueError(f"strategy must be 'random' or 'ei', got {strategy!r}")
    if metric not in ("auc", "recall"):
        raise ValueError(f"metric must be 'auc' or 'recall', got {metric!r}")
    split = train_test_split(train, 0.8, derive_seed(rng_seed, 0), stratified=True)
    if split.test.n_positive in (0, split.test.n):
        raise DataError("validation fold lacks one of the classes")
    base = base_cfg or FitConfig()
    rng = np.random.default_rng(derive_seed(rng_seed, 1))
    forest_seed = derive_seed(rng_seed, 2)
    n_trials = int(min(space.budget, space.cardinality))

    trials: list = []
    seen: set = set()
    history: list = []
    for i in range(n_trials):
        if i == 0:
            params = space.clip(*DEFAULT_PARAMS)
        elif space.finite:
            remaining = [m for m in range(space.M_range[0], space.M_range[1] + 1)
                         if (space.alpha_range[0], space.gamma_range[0], m) not in seen]
            params = (space.alpha_range[0], space.gamma_range[0], int(rng.choice(remaining)))
        else:
            params = _propose(space, rng, history, strategy, n_init, seen)
        seen.add(params)
        alpha, gamma, M = params
        cfg = dataclasses.replace(base, M=M, loss_spec=LossSpec.focal(alpha, gamma),
                                  rng_seed=forest_seed, init_weights=None)
        t0 = time.perf_counter()
        model = fit_mfl_forest(split.train, cfg)
        scores = model.predict_proba(split.test.features)
        if metric == "auc":
            score = auc(scores, split.test.labels)
        else:
            score = accuracy_recall((scores >= 0.5).astype(int), split.test.labels)[1]
        trials.append(TrialRecord(i + 1, alpha, gamma, M, float(score), time.perf_counter() - t0))
        history.append((params, float(score)))
        logger.info("trial %d: alpha=%.3f gamma=%.3f M=%d -> %.4f", i + 1, alpha, gamma, M, score)

    best = max(trials, key=lambda t: t.validation_auc)  # max() keeps the first of equals
    return TuneResult(best.params, best.validation_auc, trials)
