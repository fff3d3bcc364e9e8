"""Predictors and learners for nuisance components.

Boosted trees are backed by scikit-learn's exact-split gradient boosting;
the ridge learner is a closed-form normal-equations fit.  The ``oracle``
kind injects known functions so pipelines can be run with fixed nuisances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, GradientBoostingRegressor

from .data import Dataset
from .errors import DataError, DegenerateDataError, InvalidArgumentError
from .rng import SeedStream

BOOSTED_REG = "boosted-regression-trees"
BOOSTED_CLF = "boosted-classification-trees"
RIDGE = "ridge-linear"
ORACLE = "oracle"


class Predictor:
    """Immutable real-valued function of a covariate matrix."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "predictor"):
        self._fn = fn
        self.name = name

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.asarray(self._fn(X), dtype=np.float64).ravel()
        if out.shape[0] != X.shape[0]:
            raise DataError(f"{self.name}: expected {X.shape[0]} predictions, got {out.shape[0]}")
        return out

    def value(self, x: np.ndarray) -> float:
        return float(self.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


class ArmPredictor:
    """Function of (treatment value, covariates), e.g. an outcome model."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], name: str = "arm-predictor"):
        self._fn = fn
        self.name = name

    def predict(self, a, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (X.shape[0],))
        return np.asarray(self._fn(a, X), dtype=np.float64).ravel()

    def value(self, a: float, x: np.ndarray) -> float:
        return float(self.predict(np.asarray([a]), np.asarray(x).reshape(1, -1))[0])


def constant_predictor(c: float, name: str = "constant") -> Predictor:
    return Predictor(lambda X: np.full(X.shape[0], float(c)), name=name)


def two_arm_predictor(p0: Predictor, p1: Predictor, name: str = "two-arm") -> ArmPredictor:
    def fn(a, X):
        out = p0.predict(X)
        treated = a == 1.0
        if np.any(treated):
            out = out.copy()
            out[treated] = p1.predict(X[treated])
        return out

    return ArmPredictor(fn, name=name)


@dataclass(frozen=True)
class Learner:
    """Learner configuration.

    ``clip`` bounds probability-valued outputs away from {0, 1}.  For the
    oracle kind, ``fn`` is the injected function (vectorised over rows).
    """

    kind: str = BOOSTED_REG
    depth: int = 3
    rounds: int = 100
    learning_rate: float = 0.1
    ridge: float = 1e-8
    clip: float = 0.05
    fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in (BOOSTED_REG, BOOSTED_CLF, RIDGE, ORACLE):
            raise InvalidArgumentError(f"unknown learner kind {self.kind!r}")
        if not (0.0 < self.clip < 0.5):
            raise InvalidArgumentError("clip must lie in (0, 1/2)")
        if self.kind == ORACLE and self.fn is None:
            raise InvalidArgumentError("oracle learner needs an injected function")


def _resolve_target(data: Dataset, target) -> np.ndarray:
    if isinstance(target, str):
        arr = {"y": data.y, "a": data.a, "d": data.d, "base": data.base}.get(target)
        if arr is None:
            raise InvalidArgumentError(f"dataset has no column {target!r}")
        return arr
    return np.asarray(target, dtype=np.float64).ravel()


def _ridge_fit(X: np.ndarray, y: np.ndarray, penalty: float) -> Predictor:
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + penalty * np.eye(X.shape[1])
    beta = np.linalg.solve(A, Xc.T @ (y - ym))
    return Predictor(lambda Z: (Z - xm) @ beta + ym, name="ridge")


def fit_regressor(data: Dataset, target, learner: Learner, seed: SeedStream) -> Predictor:
    """Fit a regression of ``target`` on the covariates."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot fit on an empty dataset")
    y = _resolve_target(data, target)
    if not np.all(np.isfinite(y)):
        raise DataError("regression target contains non-finite values")
    if learner.kind == ORACLE:
        return Predictor(learner.fn, name="oracle")
    if learner.kind == RIDGE:
        return _ridge_fit(data.X, y, learner.ridge)
    if learner.kind != BOOSTED_REG:
        raise InvalidArgumentError(f"{learner.kind!r} is not a regression learner")
    # A zero-round ensemble and a zero-variance target both reduce to the mean.
    if learner.rounds == 0 or np.ptp(y) == 0.0:
        return constant_predictor(float(y.mean()), name="mean")
    model = GradientBoostingRegressor(
        max_depth=learner.depth,
        n_estimators=learner.rounds,
        learning_rate=learner.learning_rate,
        random_state=seed.rng().sklearn_seed(),
    )
    model.fit(data.X, y)
    return Predictor(model.predict, name="gbr")


def fit_quantile_regressor(
    data: Dataset, target, Q: float, learner: Learner, seed: SeedStream,
    sample_weight: np.ndarray | None = None,
) -> Predictor:
    """Boosted regression under the Q-pinball objective."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot fit on an empty dataset")
    if not (0.0 < Q < 1.0):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    y = _resolve_target(data, target)
    if learner.kind == ORACLE:
        return Predictor(learner.fn, name="oracle")
    if learner.rounds == 0 or np.ptp(y) == 0.0:
        return constant_predictor(float(np.quantile(y, Q)), name="quantile")
    model = GradientBoostingRegressor(
        loss="quantile",
        alpha=Q,
        max_depth=learner.depth,
        n_estimators=learner.rounds,
        learning_rate=learner.learning_rate,
        random_state=seed.rng().sklearn_seed(),
    )
    model.fit(data.X, y, sample_weight=sample_weight)
    return Predictor(model.predict, name="gbr-quantile")


def fit_propensity(data: Dataset, treatment, learner: Learner, eps: float, seed: SeedStream) -> Predictor:
    """Fit P(treatment = 1 | x), clipped into [eps, 1 - eps]."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot fit on an empty dataset")
    if not (0.0 < eps < 0.5):
        raise InvalidArgumentError("clip must lie in (0, 1/2)")
    t = _resolve_target(data, treatment)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DataError("propensity target must be binary")

    def clipped(fn, name):
        return Predictor(lambda X: np.clip(fn(X), eps, 1.0 - eps), name=name)

    if learner.kind == ORACLE:
        return clipped(learner.fn, "oracle-propensity")
    if len(np.unique(t)) < 2:
        raise DegenerateDataError("propensity fit needs both treatment classes")
    if learner.kind == RIDGE:
        lpm = _ridge_fit(data.X, t, learner.ridge)
        return clipped(lpm.predict, "lpm-propensity")
    model = GradientBoostingClassifier(
        max_depth=learner.depth,
        n_estimators=learner.rounds,
        learning_rate=learner.learning_rate,
        random_state=seed.rng().sklearn_seed(),
    )
    model.fit(data.X, t)
    return clipped(lambda X: model.predict_proba(X)[:, 1], "gbc-propensity")


def fit_binary_probability(
    data: Dataset, target: np.ndarray, learner: Learner, seed: SeedStream
) -> Predictor:
    """Fit P(target = 1 | x) in [0, 1] (no interior clipping)."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot fit on an empty dataset")
    t = np.asarray(target, dtype=np.float64).ravel()
    if learner.kind == ORACLE:
        return Predictor(lambda X: np.clip(learner.fn(X), 0.0, 1.0), name="oracle-probability")
    if len(np.unique(t)) < 2:
        return constant_predictor(float(t[0]), name="constant-probability")
    if learner.kind == RIDGE:
        lpm = _ridge_fit(data.X, t, learner.ridge)
        return Predictor(lambda X: np.clip(lpm.predict(X), 0.0, 1.0), name="lpm-probability")
    model = GradientBoostingClassifier(
        max_depth=learner.depth,
        n_estimators=learner.rounds,
        learning_rate=learner.learning_rate,
        random_state=seed.rng().sklearn_seed(),
    )
    model.fit(data.X, t)
    return Predictor(lambda X: model.predict_proba(X)[:, 1], name="gbc-probability")
