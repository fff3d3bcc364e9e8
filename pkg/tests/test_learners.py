import numpy as np
import pytest

from causalcal.data import Dataset
from causalcal.errors import DataError, DegenerateDataError, InvalidArgumentError
from causalcal.learners import (
    Learner,
    fit_propensity,
    fit_quantile_regressor,
    fit_regressor,
)
from causalcal.rng import derive_stream

SEED = derive_stream(2024, 0)


def _linear_data(n=200, slope=2.5, intercept=-1.0, noise=0.0, seed=1):
    rng = derive_stream(seed, 0).rng()
    x = rng.normal(n)
    y = slope * x + intercept + noise * rng.normal(n)
    return Dataset(x.reshape(-1, 1), np.zeros(n), y), x, y


def test_constant_target_fits_constant():
    ds, _, _ = _linear_data()
    pred = fit_regressor(ds, np.full(len(ds), 3.25), Learner(), SEED)
    np.testing.assert_allclose(pred.predict(ds.X), 3.25)


def test_ridge_matches_normal_equations():
    ds, x, y = _linear_data(noise=0.3, seed=5)
    pred = fit_regressor(ds, "y", Learner(kind="ridge-linear"), SEED)
    # closed-form least squares on the same data
    A = np.vstack([x, np.ones_like(x)]).T
    slope, intercept = np.linalg.lstsq(A, y, rcond=None)[0]
    fitted = pred.predict(np.array([[0.0], [1.0]]))
    assert abs(fitted[1] - fitted[0] - slope) < 1e-6
    assert abs(fitted[0] - intercept) < 1e-6


def test_zero_rounds_predicts_training_mean():
    ds, _, y = _linear_data(noise=1.0, seed=9)
    pred = fit_regressor(ds, "y", Learner(rounds=0), SEED)
    np.testing.assert_allclose(pred.predict(ds.X), y.mean())


def test_boosted_regressor_learns_signal():
    ds, x, y = _linear_data(n=500, noise=0.1, seed=3)
    pred = fit_regressor(ds, "y", Learner(), SEED)
    resid = pred.predict(ds.X) - y
    assert np.sqrt(np.mean(resid**2)) < 0.5


def test_empty_and_nonfinite_errors():
    ds, _, _ = _linear_data(n=4)
    with pytest.raises(InvalidArgumentError):
        fit_regressor(ds.subset(np.array([], dtype=int)), "y", Learner(), SEED)
    with pytest.raises(DataError):
        fit_regressor(ds, np.array([1.0, np.nan, 0.0, 2.0]), Learner(), SEED)


def test_regressor_deterministic_given_seed():
    ds, _, _ = _linear_data(n=300, noise=0.5, seed=11)
    p1 = fit_regressor(ds, "y", Learner(), derive_stream(7, 7))
    p2 = fit_regressor(ds, "y", Learner(), derive_stream(7, 7))
    np.testing.assert_array_equal(p1.predict(ds.X), p2.predict(ds.X))


def _coin_data(n=2000, seed=21):
    rng = derive_stream(seed, 0).rng()
    X = rng.normal(2 * n).reshape(n, 2)
    a = rng.bernoulli(np.full(n, 0.5))
    return Dataset(X, a, np.zeros(n))


def test_balanced_coin_propensity_near_half():
    ds = _coin_data()
    for learner in (Learner(kind="ridge-linear"), Learner(kind="boosted-classification-trees")):
        pred = fit_propensity(ds, "a", learner, 0.05, SEED)
        p = pred.predict(ds.X)
        assert abs(p.mean() - ds.a.mean()) < 0.05


def test_separable_treatment_clips():
    n = 200
    x = np.linspace(-2, 2, n)
    a = (x > 0).astype(float)
    ds = Dataset(x.reshape(-1, 1), a, np.zeros(n))
    pred = fit_propensity(ds, "a", Learner(kind="boosted-classification-trees", rounds=300), 0.05, SEED)
    p = pred.predict(ds.X)
    assert np.isclose(p.min(), 0.05)
    assert np.isclose(p.max(), 0.95)


def test_propensity_respects_clip_bounds():
    ds = _coin_data(seed=33)
    pred = fit_propensity(ds, "a", Learner(kind="boosted-classification-trees"), 0.05, SEED)
    p = pred.predict(ds.X)
    assert p.min() >= 0.05 and p.max() <= 0.95


def test_single_class_degenerate():
    n = 50
    ds = Dataset(np.zeros((n, 1)), np.ones(n), np.zeros(n))
    with pytest.raises(DegenerateDataError):
        fit_propensity(ds, "a", Learner(kind="boosted-classification-trees"), 0.05, SEED)


def test_oracle_learner_passthrough():
    ds, _, _ = _linear_data(n=10)
    oracle = Learner(kind="oracle", fn=lambda X: X[:, 0] * 10.0)
    pred = fit_regressor(ds, "y", oracle, SEED)
    np.testing.assert_allclose(pred.predict(ds.X), ds.X[:, 0] * 10.0)


def test_quantile_regressor_tracks_quantile():
    rng = derive_stream(77, 0).rng()
    n = 3000
    x = rng.normal(n)
    y = 2.0 * x + rng.normal(n)
    ds = Dataset(x.reshape(-1, 1), np.zeros(n), y)
    pred = fit_quantile_regressor(ds, "y", 0.75, Learner(), SEED)
    cover = np.mean(y <= pred.predict(ds.X))
    assert abs(cover - 0.75) < 0.05


def test_learner_validation():
    with pytest.raises(InvalidArgumentError):
        Learner(kind="nope")
    with pytest.raises(InvalidArgumentError):
        Learner(clip=0.7)
    with pytest.raises(InvalidArgumentError):
        Learner(kind="oracle")
