"""Exact finite-support oracles for conditional expectations.

A :class:`DiscreteOracle` carries a finite covariate support and, per
covariate atom, a finite joint law over (treatment, auxiliary column,
outcome).  Conditional expectations, calibration errors, and calibration
functions are then exact sums, which is what the diagnostic suite checks
algorithms against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import Observation
from .errors import InvalidArgumentError
from .losses import corrected_pinball_qut, pinball_qut
from .nuisance import CATE, LATE, QUT, NuisanceSet
from .pseudo import chi_cate, chi_late

PLUGIN = "plugin"  # naive (non-orthogonal) difference-of-arms loss, for diagnostics

_TOL = 1e-12


@dataclass(frozen=True)
class CovariateAtom:
    """One support point: covariates, mass, and the joint law of (a, d, y)."""

    x: np.ndarray
    p: float
    zlaw: tuple  # tuple of (prob, a, d, y); d may be None

    def expect(self, fn) -> float:
        return float(sum(pz * fn(a, d, y) for pz, a, d, y in self.zlaw))


@dataclass(frozen=True)
class DiscreteOracle:
    atoms: tuple = field(repr=False)

    def __post_init__(self):
        if abs(sum(atom.p for atom in self.atoms) - 1.0) > _TOL:
            raise InvalidArgumentError("covariate masses must sum to 1")
        for atom in self.atoms:
            if abs(sum(pz for pz, *_ in atom.zlaw) - 1.0) > _TOL:
                raise InvalidArgumentError("conditional law masses must sum to 1")

    # -- basic conditional functionals ------------------------------------

    def n_atoms(self) -> int:
        return len(self.atoms)

    def x(self, i: int) -> np.ndarray:
        return self.atoms[i].x

    def px(self, i: int) -> float:
        return self.atoms[i].p

    def pi0(self, i: int) -> float:
        return self.atoms[i].expect(lambda a, d, y: 1.0 if a == 1.0 else 0.0)

    def mu0(self, i: int, arm: float) -> float:
        atom = self.atoms[i]
        num = atom.expect(lambda a, d, y: y if a == arm else 0.0)
        den = atom.expect(lambda a, d, y: 1.0 if a == arm else 0.0)
        if den == 0.0:
            raise InvalidArgumentError(f"arm {arm} has zero mass at atom {i}")
        return num / den

    def theta0_cate(self, i: int) -> float:
        return self.mu0(i, 1.0) - self.mu0(i, 0.0)

    def outcome_cdf_treated(self, i: int, nu: float) -> float:
        """P(Y <= nu | A = 1, X = x_i) with the left-closed convention."""
        atom = self.atoms[i]
        den = self.pi0(i)
        num = atom.expect(lambda a, d, y: 1.0 if a == 1.0 and y <= nu else 0.0)
        return num / den

    def treated_outcome_support(self, i: int) -> list[float]:
        return sorted({y for pz, a, d, y in self.atoms[i].zlaw if a == 1.0 and pz > 0.0})

    # -- pseudo-outcome expectations ---------------------------------------

    def e_chi(self, effect: str, g: NuisanceSet, i: int) -> float:
        atom = self.atoms[i]
        if effect == CATE:
            fn = lambda a, d, y: chi_cate(g, Observation(x=atom.x, a=a, y=y))
        elif effect == LATE:
            fn = lambda a, d, y: chi_late(g, Observation(x=atom.x, a=a, y=y, d=d))
        else:
            raise InvalidArgumentError(f"no pseudo-outcome enumeration for effect {effect!r}")
        return atom.expect(fn)

    # -- conditional mean score and loss -----------------------------------

    def e_dloss(self, family: str, i: int, nu: float, g: NuisanceSet, Q: float | None = None) -> float:
        """E[dloss(nu, g; Z) | X = x_i], exactly."""
        atom = self.atoms[i]
        if family in (CATE, LATE):
            return nu - self.e_chi(family, g, i)
        if family == PLUGIN:
            return nu - (g.mu.value(1.0, atom.x) - g.mu.value(0.0, atom.x))
        if family in ("qut", "qut-plain"):
            p = g.p.value(atom.x)
            d = atom.expect(lambda a, dd, y: -a * p * (Q - (1.0 if y <= nu else 0.0)))
            if family == "qut":
                f = g.f.value(atom.x)
                d -= self.pi0(i) * p * (f - Q) - f + Q
            return d
        raise InvalidArgumentError(f"unknown loss family {family!r}")

    def e_loss(self, family: str, i: int, nu: float, g: NuisanceSet, Q: float | None = None) -> float:
        atom = self.atoms[i]
        if family in (CATE, LATE):
            if family == CATE:
                chi_fn = lambda a, d, y: chi_cate(g, Observation(x=atom.x, a=a, y=y))
            else:
                chi_fn = lambda a, d, y: chi_late(g, Observation(x=atom.x, a=a, y=y, d=d))
            return atom.expect(lambda a, d, y: 0.5 * (nu - chi_fn(a, d, y)) ** 2)
        if family in ("qut", "qut-plain"):
            p = g.p.value(atom.x)
            if family == "qut":
                f = g.f.value(atom.x)
                return atom.expect(
                    lambda a, d, y: corrected_pinball_qut(Q, p, f, a, y).value(nu)
                )
            return atom.expect(lambda a, d, y: pinball_qut(Q, p, a, y).value(nu))
        raise InvalidArgumentError(f"unknown loss family {family!r}")

    # -- calibration error and calibration function ------------------------

    def _theta_values(self, theta) -> np.ndarray:
        if callable(theta):
            return np.array([float(theta(self.x(i))) for i in range(self.n_atoms())])
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_atoms(),):
            raise InvalidArgumentError("theta must give one value per covariate atom")
        return theta

    def _levels(self, values: np.ndarray) -> dict[float, list[int]]:
        levels: dict[float, list[int]] = {}
        for i, v in enumerate(values):
            levels.setdefault(float(v), []).append(i)
        return levels

    def exact_cal_error(self, theta, family: str, g: NuisanceSet, Q: float | None = None) -> float:
        """Root mean square of the level-wise conditional mean score."""
        vals = self._theta_values(theta)
        total = 0.0
        for level, idxs in self._levels(vals).items():
            mass = sum(self.px(i) for i in idxs)
            mean_d = sum(self.px(i) * self.e_dloss(family, i, level, g, Q) for i in idxs) / mass
            total += mass * mean_d**2
        return float(np.sqrt(total))

    def gamma_star(self, phi, family: str, g: NuisanceSet, Q: float | None = None) -> np.ndarray:
        """Level-set-wise conditional loss minimizer (smallest minimizer on ties)."""
        vals = self._theta_values(phi)
        out = np.empty_like(vals)
        for level, idxs in self._levels(vals).items():
            mass = sum(self.px(i) for i in idxs)
            if family in (CATE, LATE):
                nu = sum(self.px(i) * self.e_chi(family, g, i) for i in idxs) / mass
            elif family in ("qut", "qut-plain"):
                cands = sorted({y for i in idxs for y in self.treated_outcome_support(i)})
                nu = None
                for c in cands:
                    d = sum(self.px(i) * self.e_dloss(family, i, c, g, Q) for i in idxs)
                    if d >= 0.0:
                        nu = c
                        break
                if nu is None:
                    raise InvalidArgumentError("bucket objective has no finite minimizer")
            else:
                raise InvalidArgumentError(f"unknown loss family {family!r}")
            out[idxs] = nu
        return out

    # -- nuisance displacement ---------------------------------------------

    def cross_error_cate(self, g: NuisanceSet, g0: NuisanceSet) -> float:
        """L2(P_W) norm of the pointwise product of nuisance displacements."""
        total = 0.0
        for i in range(self.n_atoms()):
            x = self.x(i)
            pi, pi_0 = g.pi.value(x), g0.pi.value(x)
            for arm in (0.0, 1.0):
                d_eta = g.mu.value(arm, x) - g0.mu.value(arm, x)
                zeta = arm / pi - (1.0 - arm) / (1.0 - pi)
                zeta0 = arm / pi_0 - (1.0 - arm) / (1.0 - pi_0)
                p_arm = self.atoms[i].expect(lambda a, d, y, arm=arm: 1.0 if a == arm else 0.0)
                total += self.px(i) * p_arm * (d_eta * (zeta - zeta0)) ** 2
        return float(np.sqrt(total))

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "atoms": [
                {
                    "x": [float(v) for v in atom.x],
                    "p": atom.p,
                    "z": [
                        {"p": pz, "a": a, **({} if d is None else {"d": d}), "y": y}
                        for pz, a, d, y in atom.zlaw
                    ],
                }
                for atom in self.atoms
            ]
        }

    @staticmethod
    def from_json(d: dict) -> "DiscreteOracle":
        atoms = []
        for spec in d["atoms"]:
            zlaw = tuple(
                (float(z["p"]), float(z["a"]), float(z["d"]) if "d" in z else None, float(z["y"]))
                for z in spec["z"]
            )
            atoms.append(CovariateAtom(x=np.asarray(spec["x"], dtype=np.float64), p=float(spec["p"]), zlaw=zlaw))
        return DiscreteOracle(atoms=tuple(atoms))


# ---------------------------------------------------------------------------
# builders


def cate_oracle(xs, px, pi, outcome_laws) -> DiscreteOracle:
    """Binary-treatment oracle from per-atom propensities and per-arm outcome laws.

    ``outcome_laws[i][arm]`` is a sequence of (prob, y).
    """
    atoms = []
    for i, x in enumerate(xs):
        zlaw = []
        for arm, arm_p in ((0.0, 1.0 - pi[i]), (1.0, pi[i])):
            for prob, y in outcome_laws[i][int(arm)]:
                zlaw.append((arm_p * prob, arm, None, float(y)))
        atoms.append(CovariateAtom(x=np.asarray(x, dtype=np.float64).reshape(-1), p=float(px[i]), zlaw=tuple(zlaw)))
    return DiscreteOracle(atoms=tuple(atoms))


def late_oracle(xs, px, pi_assign, type_probs, outcome_means, noise_law=((1.0, 0.0),)) -> DiscreteOracle:
    """Compliance oracle: assignment d ~ Bern(pi_assign), received a by type.

    ``type_probs[i]`` = (never, complier, always) masses; ``outcome_means[i]``
    = map from received arm to mean outcome per type, given as
    {(type, arm): mean}; outcomes are mean + noise with finite ``noise_law``.
    """
    types = ("never", "complier", "always")
    received = {"never": (0.0, 0.0), "complier": (0.0, 1.0), "always": (1.0, 1.0)}
    atoms = []
    for i, x in enumerate(xs):
        zlaw = []
        for assign, p_assign in ((0.0, 1.0 - pi_assign[i]), (1.0, pi_assign[i])):
            for t, p_t in zip(types, type_probs[i]):
                if p_t == 0.0:
                    continue
                arm = received[t][int(assign)]
                mean = outcome_means[i][(t, arm)]
                for p_n, eps in noise_law:
                    zlaw.append((p_assign * p_t * p_n, arm, assign, float(mean + eps)))
        atoms.append(CovariateAtom(x=np.asarray(x, dtype=np.float64).reshape(-1), p=float(px[i]), zlaw=tuple(zlaw)))
    return DiscreteOracle(atoms=tuple(atoms))


def qut_oracle(xs, px, pi, treated_laws, control_laws=None) -> DiscreteOracle:
    """Binary-treatment oracle with finite outcome laws for the quantile loss."""
    if control_laws is None:
        control_laws = treated_laws
    atoms = []
    for i, x in enumerate(xs):
        zlaw = [(float((1.0 - pi[i]) * p), 0.0, None, float(y)) for p, y in control_laws[i]]
        zlaw += [(float(pi[i] * p), 1.0, None, float(y)) for p, y in treated_laws[i]]
        atoms.append(CovariateAtom(x=np.asarray(x, dtype=np.float64).reshape(-1), p=float(px[i]), zlaw=tuple(zlaw)))
    return DiscreteOracle(atoms=tuple(atoms))


# ---------------------------------------------------------------------------
# Gaussian outcome oracle (for curvature measurements)


@dataclass(frozen=True)
class GaussianQutOracle:
    """Finite covariate atoms with Gaussian treated outcomes.

    Expected pinball losses have closed forms under a Gaussian outcome,
    which gives exact conditional loss curves for curvature measurement.
    """

    xs: tuple
    px: tuple
    pi: tuple
    means: tuple
    sigma: float = 1.0

    def n_atoms(self) -> int:
        return len(self.xs)

    def expected_pinball(self, nu: float, i: int, Q: float, p_val: float) -> float:
        m, s = self.means[i], self.sigma
        z = (nu - m) / s
        base = Q * (m - nu) - ((m - nu) * norm.cdf(z) - s * norm.pdf(z))
        return float(self.pi[i] * p_val * base)

    def expected_corrected(self, nu: float, i: int, Q: float, p_val: float, f_val: float) -> float:
        corr = self.pi[i] * p_val * (f_val - Q) - f_val + Q
        return self.expected_pinball(nu, i, Q, p_val) - nu * corr

    def density_bounds(self, nu_grid) -> tuple[float, float]:
        """Min and max of the treated outcome density over the grid, across atoms."""
        lo, hi = np.inf, 0.0
        for m in self.means:
            dens = norm.pdf((np.asarray(nu_grid) - m) / self.sigma) / self.sigma
            lo = min(lo, float(dens.min()))
            hi = max(hi, float(dens.max()))
        return lo, hi
