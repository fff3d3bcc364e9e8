"""Calibration-error estimators and orthogonality diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, InvalidArgumentError
from .learners import ArmPredictor, Predictor
from .nuisance import CATE, NuisanceSet
from .oracles import PLUGIN, DiscreteOracle


@dataclass(frozen=True)
class BinnedCalReport:
    """Quartile-binned squared calibration error estimate.

    ``estimate`` is the mean over nonempty buckets of the squared gap
    between the bucket's mean pseudo-outcome (or exceedance statistic for
    quantile effects) and its mean prediction.
    """

    edges: list[float]
    mean_pred: list[float]
    mean_chi: list[float]
    counts: list[int]
    estimate: float
    dropped: int = 0
    flags: tuple = ()

    def to_json(self) -> dict:
        return {
            "edges": self.edges,
            "mean_pred": self.mean_pred,
            "mean_chi": self.mean_chi,
            "counts": self.counts,
            "estimate": self.estimate,
            "dropped": self.dropped,
            "flags": list(self.flags),
        }


def quartile_edges(cal_preds, B: int = 4) -> np.ndarray:
    """Interior bucket edges at the order statistics of the calibration split."""
    cal_preds = np.sort(np.asarray(cal_preds, dtype=np.float64).ravel())
    n = cal_preds.size
    if n == 0:
        raise InvalidArgumentError("no calibration predictions to derive edges from")
    return np.unique(cal_preds[[(b * n) // B for b in range(1, B)]])


def _bin_report(preds: np.ndarray, stats: np.ndarray, edges: np.ndarray,
                center=None, flags=()) -> BinnedCalReport:
    """Build the report; ``center`` overrides the per-bucket mean prediction."""
    idx = np.searchsorted(edges, preds, side="left")
    mean_pred, mean_chi, counts = [], [], []
    dropped = 0
    for b in range(edges.size + 1):
        members = idx == b
        c = int(members.sum())
        if c == 0:
            dropped += 1
            continue
        counts.append(c)
        mean_chi.append(float(stats[members].mean()))
        mean_pred.append(float(center) if center is not None else float(preds[members].mean()))
    if not counts:
        raise EvaluationError("every evaluation bucket is empty")
    gaps = np.asarray(mean_chi) - np.asarray(mean_pred)
    if dropped:
        flags = tuple(flags) + ("empty-buckets-dropped",)
    return BinnedCalReport(
        edges=[float(e) for e in edges],
        mean_pred=mean_pred,
        mean_chi=mean_chi,
        counts=counts,
        estimate=float(np.mean(gaps**2)),
        dropped=dropped,
        flags=tuple(flags),
    )


def binned_cal_error(test_preds, test_chis, cal_preds=None, edges=None, B: int = 4,
                     flags=()) -> BinnedCalReport:
    """Binned squared calibration error of pseudo-outcomes against predictions.

    Bucket edges come from the calibration split's prediction quartiles
    (pass ``cal_preds``) or are supplied directly (``edges``).  Empty test
    buckets are dropped and the divisor becomes the nonempty count.
    """
    test_preds = np.asarray(test_preds, dtype=np.float64).ravel()
    test_chis = np.asarray(test_chis, dtype=np.float64).ravel()
    if test_preds.size == 0:
        raise InvalidArgumentError("empty evaluation set")
    if edges is None:
        if cal_preds is None:
            raise InvalidArgumentError("either calibration predictions or edges are required")
        edges = quartile_edges(cal_preds, B)
    return _bin_report(test_preds, test_chis, np.asarray(edges, dtype=np.float64), flags=flags)


def binned_qut_error(test_preds, a, y, p_vals, Q: float, cal_preds=None, edges=None,
                     B: int = 4, flags=()) -> BinnedCalReport:
    """Binned calibration error for quantile-under-treatment predictions.

    Pseudo-outcomes do not exist for this family; the per-bucket statistic
    is the mean weighted exceedance a * p * 1{y <= pred}, reported against
    the target level Q via the bucket mean of the loss derivative.
    """
    test_preds = np.asarray(test_preds, dtype=np.float64).ravel()
    a = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    p_vals = np.asarray(p_vals, dtype=np.float64).ravel()
    if test_preds.size == 0:
        raise InvalidArgumentError("empty evaluation set")
    if edges is None:
        if cal_preds is None:
            raise InvalidArgumentError("either calibration predictions or edges are required")
        edges = quartile_edges(cal_preds, B)
    deriv = -a * p_vals * (Q - (y <= test_preds).astype(np.float64))
    return _bin_report(test_preds, Q + deriv, np.asarray(edges, dtype=np.float64),
                       center=Q, flags=tuple(flags) + ("qut-exceedance",))


def exact_cal_error(oracle: DiscreteOracle, theta, g: NuisanceSet, family: str = CATE,
                    Q: float | None = None) -> float:
    """Exact L2 calibration error by enumeration over the oracle support."""
    return oracle.exact_cal_error(theta, family, g, Q)


def cross_error(oracle: DiscreteOracle, g: NuisanceSet, g0: NuisanceSet) -> float:
    """Exact L2 norm of the pointwise product of the two nuisance displacements."""
    return oracle.cross_error_cate(g, g0)


def theorem_bound_check(oracle: DiscreteOracle, theta, g: NuisanceSet, g0: NuisanceSet,
                        tol: float = 1e-10) -> dict:
    """Check the two-term decomposition of exact calibration error."""
    lhs = oracle.exact_cal_error(theta, CATE, g0)
    rhs = oracle.cross_error_cate(g, g0) + oracle.exact_cal_error(theta, CATE, g)
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + tol)}


def orthogonality_slope(oracle: DiscreteOracle, family: str, direction, t_grid,
                        theta=None, zero_tol: float = 1e-13) -> dict:
    """Log-log slope of the conditional-score deviation along a nuisance ray.

    ``direction`` maps t to a NuisanceSet g_t = g0 + t * delta.  Returns the
    fitted slope of log max_x |E[dloss(theta, g_t; Z) | X = x]| against
    log t; identically-zero deviations report an infinite slope.
    """
    if theta is None:
        theta = np.array([oracle.theta0_cate(i) for i in range(oracle.n_atoms())])
    theta = np.asarray(theta, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    devs = []
    for t in t_grid:
        g_t = direction(float(t))
        dev = max(
            abs(oracle.e_dloss(family, i, float(theta[i]), g_t))
            for i in range(oracle.n_atoms())
        )
        devs.append(dev)
    devs = np.asarray(devs)
    if np.all(devs < zero_tol):
        return {"slope": math.inf, "max_devs": devs.tolist()}
    if np.any(devs < zero_tol):
        raise EvaluationError("deviation vanished on part of the ray; shrink the grid")
    slope = float(np.polyfit(np.log(t_grid), np.log(devs), 1)[0])
    return {"slope": slope, "max_devs": devs.tolist()}


def cate_direction(oracle: DiscreteOracle, g0_mu, g0_pi, delta_mu, delta_pi):
    """Nuisance ray builder g_t = (mu0 + t*dmu, pi0 + t*dpi) for the average-effect loss."""

    def at(t: float) -> NuisanceSet:
        mu = ArmPredictor(
            lambda a, X, t=t: np.array(
                [g0_mu(ai, x) + t * delta_mu(ai, x) for ai, x in zip(np.atleast_1d(a), X)]
            ),
            name="mu-ray",
        )
        pi = Predictor(
            lambda X, t=t: np.array([g0_pi(x) + t * delta_pi(x) for x in X]), name="pi-ray"
        )
        return NuisanceSet(CATE, {"mu": mu, "pi": pi})

    return at


def risk_delta(bound_losses, preds_new, preds_old) -> float:
    """Mean loss of the new predictions minus that of the old ones."""
    preds_new = np.asarray(preds_new, dtype=np.float64).ravel()
    preds_old = np.asarray(preds_old, dtype=np.float64).ravel()
    losses = list(bound_losses)
    if not (len(losses) == preds_new.size == preds_old.size):
        raise InvalidArgumentError("losses and prediction vectors must align")
    new = sum(bl.value(v) for bl, v in zip(losses, preds_new))
    old = sum(bl.value(v) for bl, v in zip(losses, preds_old))
    return float((new - old) / len(losses))
