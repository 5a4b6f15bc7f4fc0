"""Pointwise binary classification losses on predicted probabilities.

All functions accept scalars or arrays and broadcast like numpy ufuncs.
``f`` is always the predicted probability of the positive class (label 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12

KINDS = ("focal", "cross_entropy", "hinge", "zero_one", "hamming")
DIFFERENTIABLE = ("focal", "cross_entropy", "hinge")


class NonDifferentiableLossError(ValueError):
    """Raised when a gradient is requested for a step-function loss."""


@dataclass(frozen=True)
class LossSpec:
    """Which loss to use, plus the focal parameters.

    ``alpha`` weights the positive class and ``gamma`` is the focusing
    exponent. Both are ignored by every kind except ``focal``.
    """

    kind: str = "focal"
    alpha: float = 0.95
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "focal":
            if not 0.0 < self.alpha < 1.0:
                raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
            if not (self.gamma >= 0.0 and np.isfinite(self.gamma)):
                raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @property
    def differentiable(self) -> bool:
        return self.kind in DIFFERENTIABLE

    @classmethod
    def focal(cls, alpha: float = 0.95, gamma: float = 2.0) -> LossSpec:
        return cls("focal", alpha, gamma)


@dataclass(frozen=True)
class ProbClip:
    epsilon: float = EPS

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")

    def __call__(self, f):
        return np.clip(f, self.epsilon, 1.0 - self.epsilon)


def _check_inputs(y, f):
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("labels must be 0 or 1")
    if np.any(~np.isfinite(f)) or np.any((f < 0.0) | (f > 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    return y, f


def losses(spec: LossSpec, y, f, clip: ProbClip = ProbClip(), check: bool = True):
    """Vectorized pointwise loss. Returns an array broadcast from ``y`` and ``f``."""
    if check:
        y, f = _check_inputs(y, f)
    else:
        y = np.asarray(y, dtype=np.float64)
        f = np.asarray(f, dtype=np.float64)
    kind = spec.kind
    if kind in ("zero_one", "hamming"):
        pred = (f >= 0.5).astype(np.float64)
        return (pred != y).astype(np.float64)
    if kind == "hinge":
        margin = (2.0 * y - 1.0) * (2.0 * f - 1.0)
        return np.maximum(0.0, 1.0 - margin)
    fc = clip(f)
    if kind == "cross_entropy":
        return -y * np.log(fc) - (1.0 - y) * np.log1p(-fc)
    # focal
    a, g = spec.alpha, spec.gamma
    pos = a * (1.0 - fc) ** g * -np.log(fc)
    neg = (1.0 - a) * fc**g * -np.log1p(-fc)
    return y * pos + (1.0 - y) * neg


def loss_grads(spec: LossSpec, y, f, clip: ProbClip = ProbClip(), check: bool = True):
    """Vectorized derivative of the pointwise loss with respect to ``f``.

    The derivative is evaluated at the clipped probability for the
    log-based kinds, so it is exact on ``[eps, 1 - eps]``.

    Raises:
        NonDifferentiableLossError: for ``zero_one`` and ``hamming``.
    """
    if not spec.differentiable:
        raise NonDifferentiableLossError(
            f"{spec.kind} loss is piecewise constant; use a derivative-free search"
        )
    if check:
        y, f = _check_inputs(y, f)
    else:
        y = np.asarray(y, dtype=np.float64)
        f = np.asarray(f, dtype=np.float64)
    if spec.kind == "hinge":
        ysign = 2.0 * y - 1.0
        active = (1.0 - ysign * (2.0 * f - 1.0)) > 0.0
        return np.where(active, -2.0 * ysign, 0.0)
    fc = clip(f)
    if spec.kind == "cross_entropy":
        return -y / fc + (1.0 - y) / (1.0 - fc)
    a, g = spec.alpha, spec.gamma
    log_f = np.log(fc)
    log_1mf = np.log1p(-fc)
    if g == 0.0:
        d_pos = -a / fc
        d_neg = (1.0 - a) / (1.0 - fc)
    else:
        # d/df [-a (1-f)^g log f] and d/df [-(1-a) f^g log(1-f)]
        d_pos = a * (g * (1.0 - fc) ** (g - 1.0) * log_f - (1.0 - fc) ** g / fc)
        d_neg = (1.0 - a) * (fc**g / (1.0 - fc) - g * fc ** (g - 1.0) * log_1mf)
    return y * d_pos + (1.0 - y) * d_neg


def loss_value(spec: LossSpec, y: int, f: float) -> float:
    """Scalar loss for one sample.

    Examples:
        >>> round(loss_value(LossSpec.focal(0.95, 2.0), 1, 0.5), 6)
        0.164622
    """
    return float(losses(spec, y, f))


def loss_grad_f(spec: LossSpec, y: int, f: float) -> float:
    """Scalar derivative d loss / d f for one sample."""
    return float(loss_grads(spec, y, f))
