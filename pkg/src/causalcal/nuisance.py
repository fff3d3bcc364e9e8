"""Effect-specific nuisance bundles and cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, split_folds
from .errors import DegenerateDataError, InvalidArgumentError
from .learners import (
    ArmPredictor,
    Learner,
    Predictor,
    constant_predictor,
    fit_binary_probability,
    fit_propensity,
    fit_regressor,
    two_arm_predictor,
)
from .rng import SeedStream

CATE = "cate"
ACD = "acd"
LATE = "late"
LATE_IV = "late_iv"
QUT = "qut"

EFFECTS = (CATE, ACD, LATE, LATE_IV, QUT)

# Components each effect's loss evaluation requires.
REQUIRED = {
    CATE: ("mu", "pi"),
    ACD: ("mu", "dmu", "score"),
    LATE: ("p", "q", "pi0"),
    LATE_IV: ("mu", "pi", "zeta_inst"),
    QUT: ("p", "f"),
}


@dataclass(frozen=True)
class NuisanceSet:
    """Named predictors backing one effect's loss, plus the clip used to fit them."""

    effect: str
    components: dict = field(repr=False)
    eps: float = 0.05

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise InvalidArgumentError(f"unknown effect {self.effect!r}")
        missing = [name for name in REQUIRED[self.effect] if name not in self.components]
        if missing:
            raise InvalidArgumentError(f"{self.effect} nuisances missing components: {missing}")

    def __getattr__(self, name):
        try:
            return self.components[name]
        except KeyError as exc:
            raise AttributeError(name) from exc


@dataclass(frozen=True)
class LearnerBundle:
    """Learners for the regression, propensity, and auxiliary-probability roles."""

    regressor: Learner = Learner()
    propensity: Learner = Learner(kind="boosted-classification-trees")
    auxiliary: Learner | None = None
    score: Learner | None = None

    def aux(self) -> Learner:
        return self.auxiliary if self.auxiliary is not None else self.propensity


def _inverse_propensity(pi: Predictor, eps: float) -> Predictor:
    return Predictor(
        lambda X: np.clip(1.0 / pi.predict(X), 1.0 / (1.0 - eps), 1.0 / eps),
        name="inverse-propensity",
    )


def _contrast_regressor(data: Dataset, target, split_col: np.ndarray, learner: Learner,
                        seed: SeedStream, name: str) -> Predictor:
    """Fit E[target | split = 1, x] - E[target | split = 0, x]."""
    hi = np.nonzero(split_col == 1.0)[0]
    lo = np.nonzero(split_col == 0.0)[0]
    if hi.size == 0 or lo.size == 0:
        raise DegenerateDataError(f"{name}: one assignment arm is empty")
    target = np.asarray(target, dtype=np.float64)
    f1 = fit_regressor(data.subset(hi), target[hi], learner, seed.child(0))
    f0 = fit_regressor(data.subset(lo), target[lo], learner, seed.child(1))
    return Predictor(lambda X: f1.predict(X) - f0.predict(X), name=name)


def fit_qut_auxiliary(data: Dataset, base, Q: float, learner: Learner, seed: SeedStream) -> Predictor:
    """Estimate x -> P(Y <= base(x) | X = x, A = 1) from treated rows.

    ``base`` may be a Predictor or a vector of base predictions aligned
    with ``data``.  Fitting against the base model rather than the unknown
    calibrated model is an approximation recorded by callers.
    """
    if not (0.0 < Q < 1.0):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    base_vals = base.predict(data.X) if isinstance(base, Predictor) else np.asarray(base, dtype=np.float64)
    treated = np.nonzero(data.a == 1.0)[0]
    if treated.size == 0:
        raise DegenerateDataError("no treated units to estimate the outcome CDF")
    labels = (data.y[treated] <= base_vals[treated]).astype(np.float64)
    return fit_binary_probability(data.subset(treated), labels, learner, seed)


def fit_nuisances(
    data: Dataset,
    effect: str,
    learners: LearnerBundle,
    seed: SeedStream,
    eps: float = 0.05,
    Q: float | None = None,
    known_pi0=None,
    base=None,
    score_target: np.ndarray | None = None,
) -> NuisanceSet:
    """Fit the nuisance components required by ``effect`` on ``data``."""
    if effect == CATE:
        treated = np.nonzero(data.a == 1.0)[0]
        control = np.nonzero(data.a == 0.0)[0]
        if treated.size == 0 or control.size == 0:
            raise DegenerateDataError("both treatment arms are required to fit outcome models")
        mu1 = fit_regressor(data.subset(treated), data.y[treated], learners.regressor, seed.child(0))
        mu0 = fit_regressor(data.subset(control), data.y[control], learners.regressor, seed.child(1))
        pi = fit_propensity(data, "a", learners.propensity, eps, seed.child(2))
        return NuisanceSet(CATE, {"mu": two_arm_predictor(mu0, mu1, "mu"), "pi": pi}, eps=eps)

    if effect == ACD:
        if learners.regressor.kind == "oracle":
            mu = ArmPredictor(learners.regressor.fn, name="oracle-mu")
        else:
            raise InvalidArgumentError(
                "fitted ACD outcome models need a derivative evaluator; supply oracle learners"
            )
        if learners.score is None:
            raise InvalidArgumentError("ACD needs a score learner (oracle or direct regression)")
        if learners.score.kind == "oracle":
            score = ArmPredictor(learners.score.fn, name="oracle-score")
        else:
            if score_target is None:
                raise InvalidArgumentError("direct score regression needs an exposed score target")
            fitted = fit_regressor(data, score_target, learners.score, seed.child(1))
            score = ArmPredictor(lambda a, X: fitted.predict(X), name="score")
        if learners.auxiliary is None or learners.auxiliary.kind != "oracle":
            raise InvalidArgumentError("ACD derivative evaluator must be injected via learners.auxiliary")
        dmu = ArmPredictor(learners.auxiliary.fn, name="oracle-dmu")
        return NuisanceSet(ACD, {"mu": mu, "dmu": dmu, "score": score}, eps=eps)

    if effect == LATE:
        if data.d is None:
            raise InvalidArgumentError("local-effect data needs the assignment column")
        if known_pi0 is None:
            raise InvalidArgumentError("the known assignment propensity is required for this effect")
        pi0 = known_pi0 if isinstance(known_pi0, Predictor) else constant_predictor(float(known_pi0), "pi0")
        p = _contrast_regressor(data, data.y, data.d, learners.regressor, seed.child(0), "p")
        q = _contrast_regressor(data, data.a, data.d, learners.regressor, seed.child(1), "q")
        return NuisanceSet(LATE, {"p": p, "q": q, "pi0": pi0}, eps=eps)

    if effect == LATE_IV:
        if data.d is None:
            raise InvalidArgumentError("instrument column is required for the IV pathway")
        treated = np.nonzero(data.a == 1.0)[0]
        control = np.nonzero(data.a == 0.0)[0]
        if treated.size == 0 or control.size == 0:
            raise DegenerateDataError("both treatment arms are required to fit outcome models")
        mu1 = fit_regressor(data.subset(treated), data.y[treated], learners.regressor, seed.child(0))
        mu0 = fit_regressor(data.subset(control), data.y[control], learners.regressor, seed.child(1))
        pi = fit_propensity(data, "a", learners.propensity, eps, seed.child(2))
        zeta = fit_propensity(data, "d", learners.propensity, eps, seed.child(3))
        return NuisanceSet(
            LATE_IV,
            {"mu": two_arm_predictor(mu0, mu1, "mu"), "pi": pi, "zeta_inst": zeta},
            eps=eps,
        )

    if effect == QUT:
        if Q is None:
            raise InvalidArgumentError("quantile level Q is required for the quantile effect")
        pi = fit_propensity(data, "a", learners.propensity, eps, seed.child(0))
        p = _inverse_propensity(pi, eps)
        base_vals = base if base is not None else data.require_base()
        f = fit_qut_auxiliary(data, base_vals, Q, learners.aux(), seed.child(1))
        return NuisanceSet(QUT, {"p": p, "f": f, "pi": pi}, eps=eps)

    raise InvalidArgumentError(f"unknown effect {effect!r}")


def cross_fit(
    data: Dataset,
    effect: str,
    learners: LearnerBundle,
    K: int,
    seed: SeedStream,
    folds: FoldAssignment | None = None,
    **kwargs,
) -> list[tuple[int, NuisanceSet]]:
    """Fit one NuisanceSet per fold, each trained only outside its fold."""
    if K < 2:
        raise InvalidArgumentError("cross-fitting needs at least two folds")
    if folds is None:
        folds = split_folds(len(data), K, seed.child(0))
    base = kwargs.pop("base", None)
    score_target = kwargs.pop("score_target", None)
    out = []
    for k in range(folds.K):
        train = folds.complement(k)
        try:
            g = fit_nuisances(
                data.subset(train),
                effect,
                learners,
                seed.child(k + 1),
                base=None if base is None else np.asarray(base)[train],
                score_target=None if score_target is None else np.asarray(score_target)[train],
                **kwargs,
            )
        except Exception as exc:
            raise type(exc)(f"fold {k}: {exc}") from exc
        out.append((k, g))
    return out
