import math

import numpy as np
import pytest

from mflforest.loss import (LossSpec, NonDifferentiableLossError, ProbClip, loss_grad_f,
                            loss_grads, loss_value, losses)

FOCAL = LossSpec.focal(0.95, 2.0)
DIFF_SPECS = [LossSpec.focal(0.95, 2.0), LossSpec.focal(0.5, 0.0), LossSpec.focal(0.25, 3.5),
              LossSpec("cross_entropy"), LossSpec("hinge")]


def focal_by_hand(alpha, gamma, y, f):
    return (-y * alpha * (1 - f) ** gamma * math.log(f)
            - (1 - y) * (1 - alpha) * f**gamma * math.log(1 - f))


def test_focal_half_probability_value():
    # 0.95 * 0.5**2 * ln 2
    assert loss_value(FOCAL, 1, 0.5) == pytest.approx(0.95 * 0.25 * math.log(2), rel=1e-14)
    assert loss_value(FOCAL, 1, 0.5) == pytest.approx(0.164622, abs=5e-7)
    assert loss_value(FOCAL, 0, 0.5) == pytest.approx(0.008664, abs=5e-7)


def test_focal_confident_correct_is_near_zero():
    assert loss_value(FOCAL, 1, 1.0) < 1e-20
    assert loss_value(FOCAL, 0, 0.0) < 1e-20


@pytest.mark.parametrize("y", [0, 1])
@pytest.mark.parametrize("f", [0.01, 0.2, 0.5, 0.77, 0.999])
def test_focal_matches_direct_formula(y, f):
    for a, g in [(0.95, 2.0), (0.3, 0.5), (0.5, 0.0)]:
        assert loss_value(LossSpec.focal(a, g), y, f) == pytest.approx(focal_by_hand(a, g, y, f), rel=1e-12)


def test_focal_gamma_zero_is_scaled_cross_entropy():
    f = np.linspace(0.0, 1.0, 1001)
    ce = LossSpec("cross_entropy")
    for y in (0, 1):
        fl = losses(LossSpec.focal(0.5, 0.0), np.full_like(f, y), f)
        assert np.array_equal(fl, 0.5 * losses(ce, np.full_like(f, y), f))
    fl1 = losses(LossSpec.focal(0.8, 0.0), np.ones_like(f), f)
    np.testing.assert_allclose(fl1, 0.8 * losses(ce, np.ones_like(f), f), rtol=1e-15)


def test_zero_one_and_hamming():
    assert loss_value(LossSpec("zero_one"), 1, 0.49) == 1.0
    assert loss_value(LossSpec("hamming"), 1, 0.49) == 1.0
    assert loss_value(LossSpec("zero_one"), 1, 0.5) == 0.0  # round half up
    f = np.random.default_rng(0).uniform(size=500)
    y = np.random.default_rng(1).integers(0, 2, size=500)
    assert np.array_equal(losses(LossSpec("zero_one"), y, f), losses(LossSpec("hamming"), y, f))


def test_hinge_margin():
    h = LossSpec("hinge")
    assert loss_value(h, 1, 1.0) == 0.0
    assert loss_value(h, 1, 0.5) == 1.0
    assert loss_value(h, 0, 1.0) == 2.0


@pytest.mark.parametrize("kind", ["focal", "cross_entropy", "hinge", "zero_one", "hamming"])
def test_losses_nonnegative(kind):
    f = np.linspace(0, 1, 2001)
    for y in (0, 1):
        assert np.all(losses(LossSpec(kind), np.full_like(f, y), f) >= 0)


@pytest.mark.parametrize("a,g", [(0.95, 2.0), (0.5, 0.0), (0.1, 5.0), (0.7, 0.3)])
def test_focal_monotone(a, g):
    f = np.linspace(1e-6, 1 - 1e-6, 10_000)
    spec = LossSpec.focal(a, g)
    pos = losses(spec, np.ones_like(f), f)
    neg = losses(spec, np.zeros_like(f), f)
    assert np.all(np.diff(pos) <= 0)
    assert np.all(np.diff(neg) >= 0)


def test_cross_entropy_gradient_value():
    assert loss_grad_f(LossSpec("cross_entropy"), 1, 0.5) == pytest.approx(-2.0, rel=1e-14)


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=lambda s: f"{s.kind}-{s.alpha}-{s.gamma}")
def test_gradient_matches_central_differences(spec):
    rng = np.random.default_rng(42)
    h = 1e-6
    for _ in range(100):
        y = int(rng.integers(0, 2))
        f = float(rng.uniform(0.01, 0.99))
        fd = (loss_value(spec, y, f + h) - loss_value(spec, y, f - h)) / (2 * h)
        g = loss_grad_f(spec, y, f)
        assert abs(g - fd) <= 1e-5 * max(abs(fd), 1e-8), (y, f, g, fd)


def test_focal_gamma_zero_gradient_is_scaled():
    f = np.linspace(0.01, 0.99, 99)
    for y in (0, 1):
        yy = np.full_like(f, y)
        np.testing.assert_array_equal(loss_grads(LossSpec.focal(0.5, 0.0), yy, f),
                                      0.5 * loss_grads(LossSpec("cross_entropy"), yy, f))


@pytest.mark.parametrize("kind", ["zero_one", "hamming"])
def test_step_losses_have_no_gradient(kind):
    with pytest.raises(NonDifferentiableLossError):
        loss_grad_f(LossSpec(kind), 1, 0.3)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        loss_value(FOCAL, 1, 1.5)
    with pytest.raises(ValueError):
        loss_value(FOCAL, 2, 0.5)
    with pytest.raises(ValueError):
        LossSpec("focal", alpha=1.0)
    with pytest.raises(ValueError):
        LossSpec("focal", gamma=-1.0)
    with pytest.raises(ValueError):
        LossSpec("squared")
    with pytest.raises(ValueError):
        ProbClip(0.5)
