import math

import numpy as np
import pytest

from mflforest.baselines import (KNNModel, anomaly_score, average_path_length, fit_iforest,
                                 fit_logistic, harmonic, knn_predict_proba, score_iforest)
from mflforest.data import Dataset
from mflforest.metrics import auc


def test_average_path_length():
    assert average_path_length(2) == 1.0
    assert average_path_length(1) == 0.0
    # c(256) from the harmonic-sum definition
    assert average_path_length(256) == pytest.approx(
        2 * sum(1 / k for k in range(1, 256)) - 2 * 255 / 256, rel=1e-14)
    assert harmonic(5000) == pytest.approx(sum(1 / k for k in range(1, 5001)), rel=1e-12)


def test_score_half_at_expected_path():
    for psi in (2, 16, 256):
        assert anomaly_score(average_path_length(psi), psi) == 0.5


def test_identical_points_single_node():
    m = fit_iforest(np.ones((2, 3)), T=10, rng_seed=1)
    assert all(t.feature.size == 1 for t in m.trees)


def test_structure_and_determinism():
    X = np.random.default_rng(0).normal(size=(500, 2))
    m = fit_iforest(X, T=100, rng_seed=3)
    assert m.T == 100 and m.subsample_size == 256
    assert max(t.height() for t in m.trees) <= math.ceil(math.log2(256))
    m2 = fit_iforest(X, T=100, rng_seed=3)
    q = np.random.default_rng(1).normal(size=(50, 2))
    np.testing.assert_array_equal(m.score(q), m2.score(q))
    s = m.score(q)
    assert np.all((s > 0) & (s < 1))
    # split values stay inside each node's observed range (checked on the root)
    for t in m.trees:
        assert X[:, t.feature[0]].min() <= t.threshold[0] <= X[:, t.feature[0]].max()
    with pytest.raises(ValueError):
        fit_iforest(X[:1])


def test_outlier_outscores_centroid():
    wins = 0
    for seed in range(50):
        X = np.random.default_rng(seed).normal(size=(300, 2))
        m = fit_iforest(X, T=100, rng_seed=seed)
        wins += score_iforest(m, np.array([8.0, 8.0])) > score_iforest(m, X.mean(axis=0))
    assert wins >= 48


def knn_oracle(X, y, x, k):
    mu, sd = X.mean(0), X.std(0)
    Z = (X - mu) / sd
    z = (x - mu) / sd
    d = [(float(np.sum((Z[i] - z) ** 2)), i) for i in range(len(X))]
    d.sort()
    return sum(y[i] for _, i in d[:k]) / k


def test_knn():
    X = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], dtype=float)
    y = np.array([0, 0, 1, 1, 1, 0])
    d = Dataset(X, y, ["a", "b"])
    for x in ([0.2, 0.3], [5.5, 5.2], [3, 3], [0, 6]):
        assert knn_predict_proba(d, x, 3) == knn_oracle(X, y, np.array(x, float), 3)
    assert knn_predict_proba(d, X[3], 1) == 1.0
    assert knn_predict_proba(d, [100, -100], 6) == 0.5
    with pytest.raises(ValueError):
        knn_predict_proba(d, [0, 0], 7)
    probs = KNNModel.fit(d, 4).predict_proba(np.random.default_rng(0).normal(size=(20, 2)) * 4)
    assert set(np.round(probs * 4).tolist()) <= {0, 1, 2, 3, 4}


def test_logistic_symmetric_intercept():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    d = Dataset(np.vstack([X, X]), np.r_[0, 0, 1, 1, 1, 0, 0, 1], ["a"])
    m = fit_logistic(d)
    assert abs(m.intercept) < 1e-3


def test_logistic_separable_and_monotone():
    rng = np.random.default_rng(0)
    x = np.r_[rng.uniform(-3, -0.5, 50), rng.uniform(0.5, 3, 50)]
    y = np.r_[np.zeros(50, int), np.ones(50, int)]
    d = Dataset(x[:, None], y, ["x"])
    m = fit_logistic(d, max_iter=500)
    assert np.all((m.predict_proba(d.features) >= 0.5) == y)
    assert np.all(np.diff(m.loss_history) <= 0)


def test_logistic_degenerate_auc():
    # constant scores give AUC exactly one half under the tie rule
    assert auc(np.full(10, 0.01), [1] + [0] * 9) == 0.5
    with pytest.raises(ValueError):
        fit_logistic(Dataset([[1.0], [2.0]], [0, 0], ["a"]))
