import numpy as np
import pytest

from mflforest.data import DataError, Dataset, make_imbalanced_blobs
from mflforest.tune import SearchSpace, TrialRecord, TuneResult, tune


@pytest.fixture(scope="module")
def data():
    return make_imbalanced_blobs(n=300, minority_frac=0.1, p=4, rng_seed=2)


def test_budget_one_returns_defaults(data):
    res = tune(data, SearchSpace(budget=1), rng_seed=0)
    assert res.best == (0.95, 2.0, 20)
    assert len(res.trials) == 1


def test_trials_and_argmax(data, tmp_path):
    space = SearchSpace(M_range=(5, 30), budget=5)
    res = tune(data, space, rng_seed=1)
    assert len(res.trials) == 5
    assert res.best_score == max(t.validation_auc for t in res.trials)
    for t in res.trials:
        assert 0.5 <= t.alpha <= 0.99 and 0 <= t.gamma <= 5 and 5 <= t.M <= 30
        assert 0 <= t.validation_auc <= 1
    res2 = tune(data, space, rng_seed=1)
    assert [t.params for t in res.trials] == [t.params for t in res2.trials]
    path = tmp_path / "trials.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "trial,alpha,gamma,M,val_auc,seconds" and len(lines) == 6


def test_tie_goes_to_earlier_trial():
    trials = [TrialRecord(1, 0.9, 1.0, 10, 0.8, 0.1), TrialRecord(2, 0.6, 3.0, 30, 0.8, 0.1)]
    best = max(trials, key=lambda t: t.validation_auc)
    assert best.trial == 1
    assert TuneResult(best.params, 0.8, trials).best == (0.9, 1.0, 10)


def test_finite_space_caps_trials(data):
    space = SearchSpace(alpha_range=(0.9, 0.9), gamma_range=(1.0, 1.0), M_range=(5, 7), budget=10)
    res = tune(data, space, rng_seed=0)
    assert len(res.trials) == 3
    assert sorted(t.M for t in res.trials) == [5, 6, 7]


def test_ei_strategy(data):
    res = tune(data, SearchSpace(M_range=(5, 15), budget=7), rng_seed=3, strategy="ei", n_init=3)
    assert len(res.trials) == 7
    assert len({t.params for t in res.trials}) == 7


def test_errors(data):
    with pytest.raises(ValueError):
        SearchSpace(budget=0)
    tiny = Dataset(np.arange(10.0)[:, None], [1] + [0] * 9, ["a"])
    with pytest.raises(DataError):
        tune(tiny, SearchSpace(budget=1))
