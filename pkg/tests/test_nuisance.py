import numpy as np
import pytest

from causalcal.data import Dataset, split_folds
from causalcal.errors import DegenerateDataError, InvalidArgumentError
from causalcal.learners import Learner
from causalcal.nuisance import (
    CATE,
    QUT,
    LearnerBundle,
    NuisanceSet,
    cross_fit,
    fit_nuisances,
    fit_qut_auxiliary,
)
from causalcal.rng import derive_stream

SEED = derive_stream(11, 0)
MEAN_LEARNERS = LearnerBundle(
    regressor=Learner(rounds=0),
    propensity=Learner(kind="ridge-linear"),
)


def _indexed_data(n=100):
    # y equals the row index so a rounds=0 fit reveals exactly which rows trained it
    rng = derive_stream(5, 0).rng()
    X = rng.normal(n).reshape(-1, 1)
    a = np.tile([0.0, 1.0], n // 2)
    return Dataset(X, a, np.arange(n, dtype=float))


def test_cross_fit_returns_one_set_per_fold():
    data = _indexed_data(100)
    out = cross_fit(data, CATE, MEAN_LEARNERS, 5, SEED)
    assert [k for k, _ in out] == list(range(5))


def test_cross_fit_excludes_own_fold():
    data = _indexed_data(100)
    folds = split_folds(100, 5, SEED.child(0))
    out = cross_fit(data, CATE, MEAN_LEARNERS, 5, SEED, folds=folds)
    for k, g in out:
        train = folds.complement(k)
        assert train.size == 80
        treated = train[data.a[train] == 1.0]
        expected = data.y[treated].mean()  # rounds=0 boosted fit = training mean
        assert g.mu.value(1.0, data.X[0]) == pytest.approx(expected)


def test_cross_fit_needs_two_folds():
    with pytest.raises(InvalidArgumentError):
        cross_fit(_indexed_data(10), CATE, MEAN_LEARNERS, 1, SEED)


def test_oracle_learners_pass_through():
    data = _indexed_data(20)
    bundle = LearnerBundle(
        regressor=Learner(kind="oracle", fn=lambda X: X[:, 0] * 3.0),
        propensity=Learner(kind="oracle", fn=lambda X: np.full(X.shape[0], 0.5)),
    )
    for _, g in cross_fit(data, CATE, bundle, 4, SEED):
        x = np.array([2.0])
        assert g.mu.value(1.0, x) == pytest.approx(6.0)
        assert g.pi.value(x) == pytest.approx(0.5)


def test_nuisance_set_requires_components():
    with pytest.raises(InvalidArgumentError):
        NuisanceSet(CATE, {"mu": None})
    with pytest.raises(InvalidArgumentError):
        NuisanceSet("nope", {})


def test_propensity_error_annotated_with_fold():
    # all-treated data fails inside each fold with the fold id in the message
    n = 20
    data = Dataset(np.arange(n, dtype=float).reshape(-1, 1), np.ones(n), np.zeros(n))
    bundle = LearnerBundle(regressor=Learner(rounds=0),
                           propensity=Learner(kind="boosted-classification-trees"))
    with pytest.raises(DegenerateDataError, match="fold 0"):
        cross_fit(data, CATE, bundle, 2, SEED)


def _gaussian_qut_data(n, seed=3):
    rng = derive_stream(seed, 0).rng()
    x = rng.normal(n)
    a = rng.bernoulli(np.full(n, 0.7))
    y = x + rng.normal(n)
    return Dataset(x.reshape(-1, 1), a, y), x


def test_qut_auxiliary_cdf_limits():
    data, _ = _gaussian_qut_data(400)
    learner = Learner(kind="boosted-classification-trees")
    hi = fit_qut_auxiliary(data, np.full(len(data), 1e6), 0.5, learner, SEED)
    lo = fit_qut_auxiliary(data, np.full(len(data), -1e6), 0.5, learner, SEED)
    assert np.allclose(hi.predict(data.X), 1.0)
    assert np.allclose(lo.predict(data.X), 0.0)


def test_qut_auxiliary_tracks_quantile_level():
    # Monte Carlo oracle: at the true conditional Q-quantile the CDF value is Q
    data, x = _gaussian_qut_data(4000, seed=9)
    Q = 0.75
    base = x + 0.6744897501960817  # mean + standard normal 0.75-quantile
    f = fit_qut_auxiliary(data, base, Q, Learner(kind="boosted-classification-trees"), SEED)
    assert abs(f.predict(data.X).mean() - Q) < 0.1


def test_qut_auxiliary_needs_treated_units():
    n = 30
    data = Dataset(np.zeros((n, 1)), np.zeros(n), np.zeros(n))
    with pytest.raises(DegenerateDataError):
        fit_qut_auxiliary(data, np.zeros(n), 0.5, Learner(), SEED)


def test_qut_nuisances_bounds():
    data, x = _gaussian_qut_data(500, seed=13)
    g = fit_nuisances(
        data, QUT,
        LearnerBundle(propensity=Learner(kind="boosted-classification-trees")),
        SEED, eps=0.05, Q=0.5, base=x,
    )
    p = g.p.predict(data.X)
    assert p.min() >= 1.0 / 0.95 - 1e-12
    assert p.max() <= 1.0 / 0.05 + 1e-12
    f = g.f.predict(data.X)
    assert f.min() >= 0.0 and f.max() <= 1.0
