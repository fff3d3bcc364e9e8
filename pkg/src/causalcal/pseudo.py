"""Generalized pseudo-outcomes for the square-style orthogonal losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldAssignment, Observation
from .errors import DataError, InvalidArgumentError, InvalidNuisanceError, InvalidStateError
from .nuisance import ACD, CATE, LATE, LATE_IV, NuisanceSet

PAPER_SIGN = "paper"
FLIPPED_SIGN = "flipped"


@dataclass(frozen=True)
class PseudoSample:
    base_pred: float
    chi: float
    weight: float = 1.0


def _cate_values(mu1, mu0, mu_a, pi, a, y):
    return mu1 - mu0 + (a / pi - (1.0 - a) / (1.0 - pi)) * (y - mu_a)


def _acd_values(dmu, score, mu_a, y):
    return dmu + score * (y - mu_a)


def _late_values(p, q, pi0, a, d, y):
    # The printed correction a(d - pi0)/q * (p/q - y(d - pi0)/(a(d - pi0)))
    # has a removable 0/0 at a = 0; it is evaluated in the cancelled form,
    # which agrees with the original wherever the original is defined.
    return p / q + a * (d - pi0) * p / q**2 - y * (d - pi0) / q


def _late_iv_values(mu1, mu0, mu_a, pi, zeta, a, d, y, sign):
    tau = (mu1 - mu0) / zeta
    resid = (y - mu_a) - tau * (a - pi)
    correction = resid * (d - zeta) / zeta
    return tau - correction if sign == PAPER_SIGN else tau + correction


def chi_cate(g: NuisanceSet, z: Observation) -> float:
    """Doubly-robust pseudo-outcome for the average-effect loss."""
    pi = g.pi.value(z.x)
    if not (0.0 < pi < 1.0):
        raise InvalidNuisanceError(f"propensity {pi!r} outside (0, 1)")
    mu1 = g.mu.value(1.0, z.x)
    mu0 = g.mu.value(0.0, z.x)
    mu_a = mu1 if z.a == 1.0 else mu0
    return float(_cate_values(mu1, mu0, mu_a, pi, z.a, z.y))


def chi_acd(g: NuisanceSet, z: Observation) -> float:
    """Pseudo-outcome for the causal-derivative loss (continuous treatment)."""
    dmu = g.dmu.value(z.a, z.x)
    score = g.score.value(z.a, z.x)
    if not np.isfinite(score):
        raise InvalidNuisanceError(f"treatment score {score!r} is not finite")
    mu_a = g.mu.value(z.a, z.x)
    return float(_acd_values(dmu, score, mu_a, z.y))


def chi_late(g: NuisanceSet, z: Observation, index: int | None = None) -> float:
    """Pseudo-outcome for the local-effect loss with known assignment propensity."""
    if z.d is None:
        raise InvalidArgumentError("local-effect pseudo-outcomes need the assignment column")
    q = g.q.value(z.x)
    if q == 0.0:
        where = f" at observation {index}" if index is not None else ""
        raise DataError(f"assignment contrast q(x) is zero{where}; ratio undefined")
    p = g.p.value(z.x)
    pi0 = g.pi0.value(z.x)
    return float(_late_values(p, q, pi0, z.a, z.d, z.y))


def chi_late_iv(g: NuisanceSet, z: Observation, sign: str = PAPER_SIGN) -> float:
    """Pseudo-outcome for the IV pathway; ``sign`` selects the correction sign."""
    if z.d is None:
        raise InvalidArgumentError("IV pseudo-outcomes need the instrument column")
    if sign not in (PAPER_SIGN, FLIPPED_SIGN):
        raise InvalidArgumentError(f"unknown sign convention {sign!r}")
    zeta = g.zeta_inst.value(z.x)
    if not (0.0 < zeta < 1.0):
        raise InvalidNuisanceError(f"instrument propensity {zeta!r} outside (0, 1)")
    pi = g.pi.value(z.x)
    mu1 = g.mu.value(1.0, z.x)
    mu0 = g.mu.value(0.0, z.x)
    mu_a = mu1 if z.a == 1.0 else mu0
    return float(_late_iv_values(mu1, mu0, mu_a, pi, zeta, z.a, z.d, z.y, sign))


def _chi_batch(effect: str, g: NuisanceSet, data: Dataset, idx: np.ndarray, sign: str) -> np.ndarray:
    X = data.X[idx]
    a = data.a[idx]
    y = data.y[idx]
    if effect == CATE:
        pi = g.pi.predict(X)
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise InvalidNuisanceError("propensity outside (0, 1)")
        mu1 = g.mu.predict(1.0, X)
        mu0 = g.mu.predict(0.0, X)
        mu_a = np.where(a == 1.0, mu1, mu0)
        return _cate_values(mu1, mu0, mu_a, pi, a, y)
    if effect == ACD:
        dmu = g.dmu.predict(a, X)
        score = g.score.predict(a, X)
        if not np.all(np.isfinite(score)):
            raise InvalidNuisanceError("treatment score is not finite")
        mu_a = g.mu.predict(a, X)
        return _acd_values(dmu, score, mu_a, y)
    if effect == LATE:
        if data.d is None:
            raise InvalidArgumentError("local-effect pseudo-outcomes need the assignment column")
        q = g.q.predict(X)
        if np.any(q == 0.0):
            bad = int(idx[np.argmax(q == 0.0)])
            raise DataError(f"assignment contrast q(x) is zero at observation {bad}; ratio undefined")
        return _late_values(g.p.predict(X), q, g.pi0.predict(X), a, data.d[idx], y)
    if effect == LATE_IV:
        if data.d is None:
            raise InvalidArgumentError("IV pseudo-outcomes need the instrument column")
        zeta = g.zeta_inst.predict(X)
        if np.any(zeta <= 0.0) or np.any(zeta >= 1.0):
            raise InvalidNuisanceError("instrument propensity outside (0, 1)")
        pi = g.pi.predict(X)
        mu1 = g.mu.predict(1.0, X)
        mu0 = g.mu.predict(0.0, X)
        mu_a = np.where(a == 1.0, mu1, mu0)
        return _late_iv_values(mu1, mu0, mu_a, pi, zeta, a, data.d[idx], y, sign)
    raise InvalidArgumentError(f"effect {effect!r} has no pseudo-outcome transform")


def make_pseudo_dataset(
    data: Dataset,
    base,
    effect: str,
    fold_nuisances: list[tuple[int, NuisanceSet]],
    folds: FoldAssignment,
    sign: str = PAPER_SIGN,
    chi_clip: float | None = None,
) -> list[PseudoSample]:
    """Transform every observation with the nuisances of its own fold.

    Samples in fold k are transformed by the NuisanceSet trained outside
    fold k, so pseudo-outcomes are always out-of-fold.  ``chi_clip``
    optionally winsorizes pseudo-outcomes symmetrically (off by default).
    """
    if folds.K < 2:
        raise InvalidArgumentError("cross-fitted pseudo-outcomes need at least two folds")
    by_fold = dict(fold_nuisances)
    base_vals = base.predict(data.X) if hasattr(base, "predict") else np.asarray(base, dtype=np.float64)
    chis = np.empty(len(data))
    for k in range(folds.K):
        if k not in by_fold:
            raise InvalidStateError(f"no nuisance model for fold {k}")
        idx = folds.indices(k)
        chis[idx] = _chi_batch(effect, by_fold[k], data, idx, sign)
    if chi_clip is not None:
        chis = np.clip(chis, -chi_clip, chi_clip)
    if not np.all(np.isfinite(chis)):
        raise DataError("pseudo-outcomes contain non-finite values")
    return [PseudoSample(float(b), float(c)) for b, c in zip(base_vals, chis)]


def single_fit_pseudo(
    data: Dataset, base, effect: str, g: NuisanceSet,
    sign: str = PAPER_SIGN, chi_clip: float | None = None,
) -> list[PseudoSample]:
    """Transform all observations with one fixed NuisanceSet."""
    base_vals = base.predict(data.X) if hasattr(base, "predict") else np.asarray(base, dtype=np.float64)
    chis = _chi_batch(effect, g, data, np.arange(len(data)), sign)
    if chi_clip is not None:
        chis = np.clip(chis, -chi_clip, chi_clip)
    if not np.all(np.isfinite(chis)):
        raise DataError("pseudo-outcomes contain non-finite values")
    return [PseudoSample(float(b), float(c)) for b, c in zip(base_vals, chis)]
