"""Partially-evaluated convex losses and their subgradients.

A :class:`BoundLoss` is a loss with everything except the prediction
plugged in: the nuisance values at the observation, the observation's
treatment/outcome, and any correction value.  What remains is a convex
function of one real argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

SQUARED = "squared"
PINBALL = "pinball"
CORRECTED_PINBALL = "corrected-pinball"


@dataclass(frozen=True)
class BoundLoss:
    """One observation's loss as a function of the prediction.

    Families:
      squared            0.5 * (nu - chi)^2
      pinball            a * p * (y - nu) * (Q - 1{y <= nu})
      corrected-pinball  pinball(nu) - nu * corr
    """

    family: str
    chi: float = 0.0
    q: float = 0.5
    p: float = 1.0
    a: float = 1.0
    y: float = 0.0
    corr: float = 0.0
    weight: float = 1.0

    def value(self, nu: float) -> float:
        if self.family == SQUARED:
            return self.weight * 0.5 * (nu - self.chi) ** 2
        pin = self.a * self.p * (self.y - nu) * (self.q - (1.0 if self.y <= nu else 0.0))
        if self.family == PINBALL:
            return self.weight * pin
        return self.weight * (pin - nu * self.corr)

    def deriv(self, nu: float) -> float:
        """Subgradient; the kink at nu = y uses the left-closed indicator."""
        if self.family == SQUARED:
            return self.weight * (nu - self.chi)
        d = -self.a * self.p * (self.q - (1.0 if self.y <= nu else 0.0))
        if self.family == CORRECTED_PINBALL:
            d -= self.corr
        return self.weight * d

    def kink(self) -> float | None:
        """Location of the subgradient jump, if the loss has one."""
        if self.family == SQUARED or self.a * self.p * self.weight == 0.0:
            return None
        return self.y

    def kink_jump(self) -> float:
        return self.weight * self.a * self.p

    def slope_left(self) -> float:
        """Derivative left of the kink (constant for pinball families)."""
        if self.family == SQUARED:
            raise InvalidArgumentError("squared losses have no constant left slope")
        d = -self.a * self.p * self.q
        if self.family == CORRECTED_PINBALL:
            d -= self.corr
        return self.weight * d


def squared_pseudo_loss(chi: float, weight: float = 1.0) -> BoundLoss:
    """0.5 * (nu - chi)^2; the loss behind every pseudo-outcome family."""
    if not np.isfinite(chi):
        raise InvalidArgumentError("pseudo-outcome must be finite")
    return BoundLoss(SQUARED, chi=float(chi), weight=weight)


def pinball_qut(Q: float, p_val: float, a: float, y: float, weight: float = 1.0) -> BoundLoss:
    """Inverse-propensity-weighted Q-pinball loss for quantiles under treatment."""
    if not (0.0 < Q < 1.0):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    return BoundLoss(PINBALL, q=float(Q), p=float(p_val), a=float(a), y=float(y), weight=weight)


def corrected_pinball_qut(
    Q: float, p_val: float, f_val: float, a: float, y: float, weight: float = 1.0
) -> BoundLoss:
    """Pinball loss with the first-order correction that restores orthogonality.

    The correction value a*p*(f - Q) - f + Q has conditional mean zero at
    the true inverse propensity, for any CDF estimate f; it multiplies the
    optimization variable.
    """
    if not (0.0 < Q < 1.0):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    corr = a * p_val * (f_val - Q) - f_val + Q
    return BoundLoss(
        CORRECTED_PINBALL,
        q=float(Q), p=float(p_val), a=float(a), y=float(y),
        corr=float(corr), weight=weight,
    )


@dataclass(frozen=True)
class LossProperties:
    """Measured curvature bounds of a conditional expected loss."""

    alpha: float
    beta: float

    @property
    def convex(self) -> bool:
        return self.alpha > 0.0


def measure_convexity(cond_mean_loss, n_atoms: int, nu_grid: np.ndarray) -> LossProperties:
    """Empirical strong-convexity / smoothness of nu -> E[loss(nu) | X = x].

    ``cond_mean_loss(nu, i)`` must return the exact conditional expected
    loss at covariate atom ``i``.  alpha and beta are the min and max of
    the second difference quotient over the (uniform) grid interior and
    all atoms.  A non-convex measurement (alpha <= 0) is reported, not
    raised.
    """
    nu_grid = np.asarray(nu_grid, dtype=np.float64)
    if nu_grid.size < 3:
        raise InvalidArgumentError("convexity measurement needs at least three grid points")
    h = np.diff(nu_grid)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise InvalidArgumentError("convexity measurement needs a uniform grid")
    step = float(h[0])
    alpha, beta = np.inf, -np.inf
    for i in range(n_atoms):
        vals = np.array([cond_mean_loss(float(nu), i) for nu in nu_grid])
        quot = (vals[2:] - 2.0 * vals[1:-1] + vals[:-2]) / step**2
        alpha = min(alpha, float(quot.min()))
        beta = max(beta, float(quot.max()))
    return LossProperties(alpha=alpha, beta=beta)
