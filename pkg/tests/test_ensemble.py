import dataclasses

import numpy as np
import pytest

from mflforest.data import Dataset, make_imbalanced_blobs
from mflforest.ensemble import (FitConfig, ForestModel, ModelFormatError, ModelVersionError,
                                dumps_model, fit_forest, fit_mfl_forest, load_model,
                                loads_model, predict_labels, predict_proba, prediction_matrix,
                                save_model)
from mflforest.loss import LossSpec
from mflforest.mfl import Criterion, uniform_weights
from mflforest.tree import TreeModel, TreeParams


def leaf(p, n_features=2):
    return TreeModel(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                     np.array([float(p)]), np.array([1]), n_features)


@pytest.fixture(scope="module")
def blobs():
    return make_imbalanced_blobs(n=400, minority_frac=0.1, p=4, rng_seed=1)


def test_single_tree_forest(blobs):
    fm = fit_mfl_forest(blobs, FitConfig(M=1, rng_seed=3))
    assert fm.weights.tolist() == [1.0]
    np.testing.assert_array_equal(fm.predict_proba(blobs.features),
                                  fm.trees[0].predict_proba(blobs.features))


def test_fit_is_deterministic(blobs):
    a = fit_mfl_forest(blobs, FitConfig(M=8, rng_seed=11))
    b = fit_mfl_forest(blobs, FitConfig(M=8, rng_seed=11))
    assert a.weights.tobytes() == b.weights.tobytes()
    assert dumps_model(a) == dumps_model(b)


def test_forest_criterion_not_worse_than_uniform(blobs):
    cfg = FitConfig(M=10, rng_seed=2)
    fm = fit_mfl_forest(blobs, cfg)
    crit = Criterion(prediction_matrix(fm.trees, blobs), cfg.loss_spec)
    assert crit(fm.weights) <= crit(uniform_weights(10)) + 1e-9


def test_aggregators():
    trees = (leaf(0.9), leaf(0.8), leaf(0.2))
    vote = ForestModel(trees, uniform_weights(3), "vote")
    assert predict_proba(vote, [0, 0]) == pytest.approx(2 / 3)
    assert predict_labels(vote, np.zeros((1, 2)))[0] == 1
    w = ForestModel(trees, [0, 1, 0])
    assert predict_proba(w, [5, 5]) == 0.8
    mean = ForestModel((leaf(0.0), leaf(1.0)), [0.5, 0.5], "mean")
    assert predict_proba(mean, [0, 0]) == 0.5
    with pytest.raises(ValueError):
        ForestModel(trees, [0, 1, 0], "vote")
    with pytest.raises(ValueError):
        predict_proba(w, [1, 2, 3])


def test_uniform_weighted_equals_mean(blobs):
    fm = fit_forest(blobs, FitConfig(M=7, rng_seed=1), "mean")
    w = fm.with_weights(uniform_weights(7))
    np.testing.assert_array_equal(w.predict_proba(blobs.features), fm.predict_proba(blobs.features))


def test_vote_mean_agree_when_unanimous():
    trees = (leaf(0.7), leaf(0.9))
    X = np.zeros((3, 2))
    v = predict_labels(ForestModel(trees, [0.5, 0.5], "vote"), X)
    m = predict_labels(ForestModel(trees, [0.5, 0.5], "mean"), X)
    assert np.array_equal(v, m)


def test_predict_labels_threshold():
    fm = ForestModel((leaf(0.5),), [1.0])
    assert predict_labels(fm, np.zeros((1, 2)), 0.5)[0] == 1
    assert predict_labels(ForestModel((leaf(0.0),), [1.0]), np.zeros((4, 2))).sum() == 0
    with pytest.raises(ValueError):
        predict_labels(fm, np.zeros((1, 2)), 1.0)


def test_threshold_monotone(blobs):
    fm = fit_mfl_forest(blobs, FitConfig(M=5, rng_seed=4))
    counts = [predict_labels(fm, blobs.features, t).sum() for t in np.linspace(0.05, 0.95, 19)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def separable(n=600, pos_frac=0.05, seed=0):
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pos_frac))
    X = np.vstack([rng.normal(0, 1, (n - n_pos, 3)), rng.normal(8, 1, (n_pos, 3))])
    y = np.r_[np.zeros(n - n_pos, int), np.ones(n_pos, int)]
    return Dataset(X, y, ["a", "b", "c"])


def corrupted_forest(d, seed):
    """10 trees on clean bootstraps plus 10 trees on label-flipped bootstraps."""
    from mflforest.ensemble import derive_seed
    from mflforest.tree import bootstrap_sample, fit_tree
    flipped = Dataset(d.features, 1 - d.labels, d.feature_names)
    trees = []
    for m in range(20):
        src = d if m < 10 else flipped
        idx = bootstrap_sample(d.n, derive_seed(seed, m, 0))
        trees.append(fit_tree(src, idx, TreeParams(), derive_seed(seed, m, 1)))
    return trees


def test_corrupted_trees_downweighted():
    from mflforest.ensemble import fit_weights
    d = separable()
    trees = corrupted_forest(d, 0)
    w = fit_weights(trees, d, FitConfig(M=20))
    assert w[:10].sum() >= 0.8


def test_save_load_roundtrip(tmp_path, blobs):
    for agg, spec in (("weighted", LossSpec.focal(0.9, 1.5)), ("vote", None)):
        cfg = FitConfig(M=6, rng_seed=7, loss_spec=spec or LossSpec())
        fm = fit_forest(blobs, cfg, agg)
        path = tmp_path / f"m-{agg}.mflf"
        save_model(fm, path)
        back = load_model(path)
        X = np.random.default_rng(0).normal(size=(100, blobs.p)) * 3
        assert back.predict_proba(X).tobytes() == fm.predict_proba(X).tobytes()
        assert back.aggregation == agg and back.M == 6
        assert back.weights.tobytes() == fm.weights.tobytes()
        if agg == "weighted":
            assert back.loss_spec_used == cfg.loss_spec


def test_corrupted_files(blobs):
    blob = dumps_model(fit_mfl_forest(blobs, FitConfig(M=3, rng_seed=1)))
    with pytest.raises(ModelFormatError):
        loads_model(blob[: len(blob) // 2])
    flipped = bytearray(blob)
    flipped[40] ^= 0xFF
    with pytest.raises(ModelFormatError):
        loads_model(bytes(flipped))
    with pytest.raises(ModelFormatError):
        loads_model(b"NOPE" + blob[4:])
    future = bytearray(blob)
    future[4:6] = (99).to_bytes(2, "little")
    with pytest.raises(ModelVersionError):
        loads_model(bytes(future))


def test_header_layout(blobs):
    fm = fit_mfl_forest(blobs, FitConfig(M=4, rng_seed=1, complexity_mode="internal"))
    blob = dumps_model(fm)
    assert blob[:4] == b"MFLF"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == 4
    assert int.from_bytes(blob[10:14], "little") == blobs.p
    assert blob[14] == 1  # internal


def test_single_class_rejected(blobs):
    d = Dataset(blobs.features, np.zeros(blobs.n, int), blobs.feature_names)
    with pytest.raises(ValueError):
        fit_mfl_forest(d, FitConfig(M=2))


def test_sqrt_m_feature_subset(blobs):
    cfg = dataclasses.replace(FitConfig(M=9, rng_seed=1), feature_subset="sqrt_M")
    fm = fit_mfl_forest(blobs, cfg)
    assert fm.M == 9
