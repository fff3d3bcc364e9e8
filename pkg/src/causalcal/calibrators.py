"""Post-processing fitters: isotonic, binning, linear, Platt, and general ERM.

Every fitter returns a :class:`CalibratorModel`, a pure serializable map
from base predictions to calibrated predictions.  Tie-breaking is always
"smallest minimizer" so fits are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDataError,
    EvaluationError,
    InvalidArgumentError,
    UnboundedObjectiveError,
)
from .losses import CORRECTED_PINBALL, PINBALL, SQUARED, BoundLoss
from .rng import SeedStream

ISOTONIC = "isotonic"
BINNING = "binning"
LINEAR = "linear"
PLATT = "platt"


@dataclass(frozen=True)
class CalibratorModel:
    """Fitted post-processing map from base prediction to calibrated value."""

    kind: str
    params: dict = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def apply(self, preds) -> np.ndarray:
        v = np.atleast_1d(np.asarray(preds, dtype=np.float64))
        if self.kind == ISOTONIC:
            bps = np.asarray(self.params["breakpoints"])
            levels = np.asarray(self.params["levels"])
            idx = np.clip(np.searchsorted(bps, v, side="right") - 1, 0, len(bps) - 1)
            out = levels[idx]
            xi = self.params.get("xi_slope", 0.0)
            if xi:
                out = out + xi * v
            return out
        if self.kind == BINNING:
            edges = np.asarray(self.params["edges"])
            levels = np.asarray(self.params["levels"])
            return levels[np.searchsorted(edges, v, side="right")]
        if self.kind == LINEAR:
            return self.params["slope"] * v + self.params["intercept"]
        if self.kind == PLATT:
            u = np.clip(self.params["a"] * v + self.params["b"], -500.0, 500.0)
            return 1.0 / (1.0 + np.exp(u))
        raise InvalidArgumentError(f"unknown calibrator class {self.kind!r}")

    def apply_one(self, pred: float) -> float:
        return float(self.apply([pred])[0])

    def to_json(self) -> dict:
        return {"class": self.kind, "params": self.params, "meta": self.meta}

    @staticmethod
    def from_json(d: dict) -> "CalibratorModel":
        return CalibratorModel(kind=d["class"], params=d["params"], meta=d.get("meta", {}))


# ---------------------------------------------------------------------------
# isotonic


def pava_blocks(points):
    """Weighted least-squares isotonic fit of target on prediction order.

    ``points`` is a sequence of (pred, target, weight); ties in pred are
    pre-pooled by weighted mean.  Arithmetic stays in the input number
    type (floats or Fractions), so integer/rational inputs give exact
    results.  Returns (unique sorted preds, fitted level per pred).
    """
    if len(points) == 0:
        raise InvalidArgumentError("isotonic fit needs at least one point")
    pooled: dict = {}
    for pred, target, weight in points:
        if weight <= 0:
            raise InvalidArgumentError("isotonic weights must be positive")
        sw, swy = pooled.get(pred, (0, 0))
        pooled[pred] = (sw + weight, swy + weight * target)
    preds = sorted(pooled)
    # stack of blocks: [count of pooled preds, sum w, sum w*y]
    blocks: list[list] = []
    for pred in preds:
        sw, swy = pooled[pred]
        blocks.append([1, sw, swy])
        while len(blocks) > 1 and blocks[-2][2] * blocks[-1][1] > blocks[-1][2] * blocks[-2][1]:
            m, sw2, swy2 = blocks.pop()
            blocks[-1][0] += m
            blocks[-1][1] += sw2
            blocks[-1][2] += swy2
    levels = []
    for m, sw, swy in blocks:
        levels.extend([swy / sw] * m)
    return preds, levels


def pava(points) -> CalibratorModel:
    """Exact isotonic least squares via pool-adjacent-violators."""
    preds, levels = pava_blocks(points)
    return CalibratorModel(
        ISOTONIC,
        params={
            "breakpoints": [float(p) for p in preds],
            "levels": [float(v) for v in levels],
            "xi_slope": 0.0,
        },
        meta={"extrapolation": "clamp"},
    )


def make_strict(model: CalibratorModel, xi_slope: float) -> CalibratorModel:
    """Add a strictly increasing ramp so the post-processing is injective."""
    if model.kind != ISOTONIC:
        raise InvalidArgumentError("strictness fix applies to isotonic models")
    if xi_slope <= 0.0:
        raise InvalidArgumentError("strictness slope must be positive")
    params = dict(model.params)
    params["xi_slope"] = params.get("xi_slope", 0.0) + float(xi_slope)
    meta = dict(model.meta)
    meta["strict"] = True
    return CalibratorModel(ISOTONIC, params=params, meta=meta)


# ---------------------------------------------------------------------------
# binning


def umb_edges(preds, B: int) -> tuple[np.ndarray, dict]:
    """Interior bucket edges at evenly spaced order statistics.

    Buckets are half-open [e_{b-1}, e_b) with outer edges at -inf/+inf so
    unbounded predictors are supported.  Duplicate edges are merged and
    the reduction reported in the returned metadata.
    """
    preds = np.asarray(preds, dtype=np.float64).ravel()
    n = preds.size
    if B < 1:
        raise InvalidArgumentError("bucket count must be at least 1")
    if n < B:
        raise InvalidArgumentError(f"need at least B={B} points, got {n}")
    sorted_preds = np.sort(preds)
    edges = np.unique(sorted_preds[[(b * n) // B for b in range(1, B)]])
    # an edge at the minimum would bound an empty leftmost bucket; merge it away
    edges = edges[edges > sorted_preds[0]]
    meta = {"requested_buckets": int(B), "effective_buckets": int(edges.size + 1),
            "merged_buckets": int(B - edges.size - 1)}
    return edges, meta


def _bucket_index(edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, values, side="right")


def _fill_empty_levels(levels: list, counts: np.ndarray) -> tuple[list[float], list[int]]:
    """Replace None levels by the nearest nonempty bucket's level."""
    filled = list(levels)
    inherited = [i for i, v in enumerate(filled) if v is None]
    nonempty = [i for i, v in enumerate(filled) if v is not None]
    if not nonempty:
        raise EvaluationError("all buckets are empty")
    for i in inherited:
        j = min(nonempty, key=lambda k: (abs(k - i), k))
        filled[i] = filled[j]
    return [float(v) for v in filled], inherited


def binning_fit(pseudo, B: int) -> CalibratorModel:
    """Histogram binning: uniform-mass buckets, level = mean pseudo-outcome."""
    preds = np.array([s.base_pred for s in pseudo])
    chis = np.array([s.chi for s in pseudo])
    weights = np.array([s.weight for s in pseudo])
    edges, meta = umb_edges(preds, B)
    idx = _bucket_index(edges, preds)
    levels: list = []
    counts = np.zeros(edges.size + 1, dtype=np.int64)
    for b in range(edges.size + 1):
        members = idx == b
        counts[b] = int(members.sum())
        if counts[b] == 0:
            levels.append(None)
        else:
            levels.append(float(np.average(chis[members], weights=weights[members])))
    levels, inherited = _fill_empty_levels(levels, counts)
    meta = dict(meta, inherited_buckets=inherited, counts=[int(c) for c in counts])
    return CalibratorModel(BINNING, params={"edges": [float(e) for e in edges], "levels": levels}, meta=meta)


# ---------------------------------------------------------------------------
# linear and Platt


def _weighted_lsq(preds: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    sw = weights.sum()
    mx = np.sum(weights * preds) / sw
    my = np.sum(weights * targets) / sw
    vx = np.sum(weights * (preds - mx) ** 2)
    if vx == 0.0:
        raise DegenerateDataError("linear fit needs at least two distinct predictions")
    slope = np.sum(weights * (preds - mx) * (targets - my)) / vx
    return float(slope), float(my - slope * mx)


def linear_fit(pseudo) -> CalibratorModel:
    """Exact least-squares line of pseudo-outcome on prediction."""
    preds = np.array([s.base_pred for s in pseudo])
    chis = np.array([s.chi for s in pseudo])
    weights = np.array([s.weight for s in pseudo])
    slope, intercept = _weighted_lsq(preds, chis, weights)
    return CalibratorModel(LINEAR, params={"slope": slope, "intercept": intercept})


def platt_fit(pseudo, regularization: float = 1e-6, tol: float = 1e-8, max_iter: int = 200) -> CalibratorModel:
    """Log-loss fit of 1 / (1 + exp(a x + b)) by damped Newton.

    A tiny quadratic penalty keeps separable calibration sets from
    diverging; non-convergence within ``max_iter`` is flagged in metadata.
    """
    x = np.array([s.base_pred for s in pseudo])
    t = np.array([s.chi for s in pseudo])
    w = np.array([s.weight for s in pseudo])
    if np.any((t < 0.0) | (t > 1.0)):
        raise InvalidArgumentError("Platt scaling needs targets in [0, 1]")
    ab = np.zeros(2)
    converged = False
    for _ in range(max_iter):
        u = np.clip(ab[0] * x + ab[1], -500.0, 500.0)
        q = 1.0 / (1.0 + np.exp(u))
        # dloss/du = t - q under this (decreasing) parametrization
        r = w * (t - q)
        grad = np.array([np.sum(r * x), np.sum(r)]) + 2.0 * regularization * ab
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        h = w * q * (1.0 - q)
        H = np.array([[np.sum(h * x * x), np.sum(h * x)], [np.sum(h * x), np.sum(h)]])
        H += 2.0 * regularization * np.eye(2)
        step = np.linalg.solve(H, grad)
        # halve the step until the penalized log-loss stops increasing
        current = _platt_objective(ab, x, t, w, regularization)
        scale = 1.0
        for _ in range(50):
            cand = ab - scale * step
            if _platt_objective(cand, x, t, w, regularization) <= current:
                break
            scale *= 0.5
        ab = ab - scale * step
    return CalibratorModel(
        PLATT,
        params={"a": float(ab[0]), "b": float(ab[1])},
        meta={"converged": bool(converged), "regularization": regularization},
    )


def _platt_objective(ab, x, t, w, reg):
    u = np.clip(ab[0] * x + ab[1], -500.0, 500.0)
    # log-loss written in terms of u to stay finite: -t*log q - (1-t)*log(1-q)
    q = 1.0 / (1.0 + np.exp(u))
    eps = 1e-300
    ll = -t * np.log(q + eps) - (1.0 - t) * np.log(1.0 - q + eps)
    return float(np.sum(w * ll) + reg * float(ab @ ab))


# ---------------------------------------------------------------------------
# piecewise-linear minimization (pinball families)


def pwl_argmin(base_slope: float, breakpoints: np.ndarray, jumps: np.ndarray, what: str = "objective") -> float:
    """Smallest minimizer of a convex piecewise-linear function.

    The function's derivative is ``base_slope`` left of all breakpoints and
    increases by ``jumps[i]`` at ``breakpoints[i]``.  Raises when the
    objective is unbounded below.
    """
    if breakpoints.size == 0:
        if base_slope == 0.0:
            return 0.0
        raise UnboundedObjectiveError(f"{what}: linear objective with slope {base_slope} is unbounded")
    order = np.argsort(breakpoints, kind="stable")
    bps = breakpoints[order]
    cum = base_slope + np.cumsum(jumps[order])
    # tolerance absorbs float accumulation so flat regions resolve to their left end
    tol = 1e-12 * max(abs(base_slope), float(np.sum(jumps)))
    if base_slope >= -tol:
        if base_slope > tol:
            raise UnboundedObjectiveError(f"{what}: objective decreases without bound to the left")
        return float(bps[0])
    hit = np.nonzero(cum >= -tol)[0]
    if hit.size == 0:
        raise UnboundedObjectiveError(f"{what}: objective decreases without bound to the right")
    return float(bps[hit[0]])


def _pinball_scan_parts(losses) -> tuple[float, np.ndarray, np.ndarray]:
    base = 0.0
    bps, jumps = [], []
    for bl in losses:
        base += bl.slope_left()
        k = bl.kink()
        if k is not None:
            bps.append(k)
            jumps.append(bl.kink_jump())
    return base, np.asarray(bps), np.asarray(jumps)


def bucket_minimize(losses, what: str = "bucket") -> float:
    """Exact minimizer of a summed convex bucket objective.

    Squared families solve in closed form; pinball families scan the
    cumulative subgradient across sorted kinks.  Flat minima resolve to
    the smallest minimizer.
    """
    losses = list(losses)
    if not losses:
        raise InvalidArgumentError(f"{what}: cannot minimize an empty bucket")
    families = {bl.family for bl in losses}
    if families == {SQUARED}:
        w = np.array([bl.weight for bl in losses])
        chi = np.array([bl.chi for bl in losses])
        return float(np.average(chi, weights=w))
    if not families <= {PINBALL, CORRECTED_PINBALL}:
        raise InvalidArgumentError(f"{what}: cannot mix squared and pinball losses")
    base, bps, jumps = _pinball_scan_parts(losses)
    return pwl_argmin(base, bps, jumps, what=what)


# ---------------------------------------------------------------------------
# general ERM calibration


def _erm_objective(bound_losses, slope: float, intercept: float) -> float:
    return float(sum(bl.value(slope * x + intercept) for x, bl in bound_losses))


def _erm_linear_pinball(bound_losses) -> tuple[float, float]:
    """Averaged subgradient descent followed by exact coordinate polish."""
    xs = np.array([x for x, _ in bound_losses])
    losses = [bl for _, bl in bound_losses]
    slope, intercept = 0.0, 0.0
    # scale steps to the data so the averaged iterates land near the optimum
    y_scale = max(1.0, float(np.max(np.abs([bl.y for bl in losses]), initial=0.0)))
    x_scale = max(1.0, float(np.max(np.abs(xs), initial=0.0)))
    n = len(losses)
    avg = np.zeros(2)
    point = np.array([slope, intercept])
    for t in range(1, 301):
        nu = point[0] * xs + point[1]
        d = np.array([bl.deriv(v) for bl, v in zip(losses, nu)])
        grad = np.array([np.sum(d * xs), np.sum(d)]) / n
        step = y_scale / (np.sqrt(t) * max(1.0, x_scale))
        norm = np.linalg.norm(grad)
        if norm > 0.0:
            point = point - step * grad / norm
        avg += (point - avg) / t
    best = None
    for start in (avg, point):
        cand = _coordinate_polish(xs, losses, float(start[0]), float(start[1]))
        obj = _erm_objective(bound_losses, *cand)
        if best is None or obj < best[0]:
            best = (obj, cand)
    return best[1]


def _coordinate_polish(xs, losses, slope, intercept, rounds: int = 30):
    for _ in range(rounds):
        prev = (slope, intercept)
        # exact intercept for fixed slope: kinks shift to y - slope * x
        base, bps, jumps = 0.0, [], []
        for x, bl in zip(xs, losses):
            base += bl.slope_left()
            if bl.kink() is not None:
                bps.append(bl.y - slope * x)
                jumps.append(bl.kink_jump())
        intercept = pwl_argmin(base, np.asarray(bps), np.asarray(jumps), what="erm-linear intercept")
        # exact slope for fixed intercept: kinks at (y - intercept) / x
        base, bps, jumps = 0.0, [], []
        for x, bl in zip(xs, losses):
            if x > 0.0:
                base += x * bl.slope_left()
            elif x < 0.0:
                right = bl.weight * (bl.a * bl.p * (1.0 - bl.q) - (bl.corr if bl.family == CORRECTED_PINBALL else 0.0))
                base += x * right
            if x != 0.0 and bl.kink() is not None:
                bps.append((bl.y - intercept) / x)
                jumps.append(abs(x) * bl.kink_jump())
        slope = pwl_argmin(base, np.asarray(bps), np.asarray(jumps), what="erm-linear slope")
        if (slope, intercept) == prev:
            break
    return slope, intercept


def _isotonic_erm_pinball(bound_losses) -> CalibratorModel:
    """Pool-adjacent-violators with per-block convex minimization."""
    groups: dict[float, list[BoundLoss]] = {}
    for x, bl in bound_losses:
        groups.setdefault(float(x), []).append(bl)
    preds = sorted(groups)
    blocks: list[list] = []  # [n pooled preds, losses]
    levels: list[float] = []
    for pred in preds:
        blocks.append([1, list(groups[pred])])
        levels.append(bucket_minimize(blocks[-1][1], what=f"isotonic block at {pred}"))
        while len(blocks) > 1 and levels[-2] > levels[-1]:
            m, ls = blocks.pop()
            levels.pop()
            blocks[-1][0] += m
            blocks[-1][1].extend(ls)
            levels[-1] = bucket_minimize(blocks[-1][1], what="isotonic pooled block")
    expanded: list[float] = []
    for (m, _), lv in zip(blocks, levels):
        expanded.extend([lv] * m)
    return CalibratorModel(
        ISOTONIC,
        params={"breakpoints": [float(p) for p in preds], "levels": expanded, "xi_slope": 0.0},
        meta={"extrapolation": "clamp", "objective": "pinball"},
    )


def erm_calibrate(bound_losses, klass: str, B: int | None = None) -> CalibratorModel:
    """Empirical-risk-minimizing post-processing over a function class.

    ``bound_losses`` is a sequence of (base prediction, BoundLoss).  For
    squared losses the fits collapse to the classical calibrators; pinball
    families are solved by exact breakpoint scans (binning, isotonic) or
    subgradient descent plus coordinate polish (linear).
    """
    bound_losses = [(float(x), bl) for x, bl in bound_losses]
    if not bound_losses:
        raise InvalidArgumentError("ERM calibration needs at least one loss")
    families = {bl.family for _, bl in bound_losses}
    squared = families == {SQUARED}
    if not squared and not families <= {PINBALL, CORRECTED_PINBALL}:
        raise InvalidArgumentError(f"unsupported loss mix {sorted(families)}")

    if klass == LINEAR:
        if squared:
            from .pseudo import PseudoSample

            return linear_fit([PseudoSample(x, bl.chi, bl.weight) for x, bl in bound_losses])
        slope, intercept = _erm_linear_pinball(bound_losses)
        return CalibratorModel(LINEAR, params={"slope": slope, "intercept": intercept},
                               meta={"objective": "pinball"})

    if klass == BINNING:
        if B is None:
            raise InvalidArgumentError("binning calibration needs a bucket count")
        if squared:
            from .pseudo import PseudoSample

            return binning_fit([PseudoSample(x, bl.chi, bl.weight) for x, bl in bound_losses], B)
        preds = np.array([x for x, _ in bound_losses])
        edges, meta = umb_edges(preds, B)
        idx = _bucket_index(edges, preds)
        levels: list = []
        counts = np.zeros(edges.size + 1, dtype=np.int64)
        for b in range(edges.size + 1):
            members = [bl for i, (_, bl) in enumerate(bound_losses) if idx[i] == b]
            counts[b] = len(members)
            levels.append(bucket_minimize(members, what=f"bucket {b}") if members else None)
        levels, inherited = _fill_empty_levels(levels, counts)
        meta = dict(meta, inherited_buckets=inherited, counts=[int(c) for c in counts], objective="pinball")
        return CalibratorModel(BINNING, params={"edges": [float(e) for e in edges], "levels": levels}, meta=meta)

    if klass == ISOTONIC:
        if squared:
            return pava([(x, bl.chi, bl.weight) for x, bl in bound_losses])
        return _isotonic_erm_pinball(bound_losses)

    raise InvalidArgumentError(f"unsupported calibrator class {klass!r} for ERM")


def ensure_distinct_levels(levels, eta_noise: float, seed: SeedStream) -> list[float]:
    """Perturb duplicated levels by at most ``eta_noise`` to make them distinct."""
    if eta_noise < 0.0:
        raise InvalidArgumentError("perturbation bound must be nonnegative")
    levels = [float(v) for v in levels]
    if len(set(levels)) == len(levels):
        return levels
    if eta_noise == 0.0:
        raise InvalidArgumentError("levels are tied and the perturbation bound is zero")
    for attempt in range(64):
        rng = seed.child(attempt).rng()
        noise = (np.asarray(rng.uniform(len(levels))) * 2.0 - 1.0) * eta_noise
        out = [v + float(e) for v, e in zip(levels, noise)]
        if len(set(out)) == len(out):
            return out
    raise InvalidArgumentError("could not separate tied levels")
