"""End-to-end calibration procedures.

Four sample-splitting/cross-fitting pipelines plus the three-way
uniform-mass-binning pathway.  Every pipeline returns the fitted
:class:`CalibratorModel` and a deterministic report that, together with
the seed and config, fully determines reproduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibrators import (
    BINNING,
    ISOTONIC,
    LINEAR,
    PLATT,
    CalibratorModel,
    _bucket_index,
    _fill_empty_levels,
    binning_fit,
    bucket_minimize,
    ensure_distinct_levels,
    erm_calibrate,
    linear_fit,
    make_strict,
    pava,
    platt_fit,
    umb_edges,
)
from .data import Dataset, split_folds
from .errors import ConfigError, InvalidArgumentError
from .learners import Learner, Predictor
from .losses import corrected_pinball_qut
from .nuisance import ACD, CATE, LATE, LATE_IV, QUT, LearnerBundle, cross_fit, fit_nuisances
from .pseudo import PAPER_SIGN, make_pseudo_dataset, single_fit_pseudo
from .rng import SeedStream
from .util import hash_indices

UNIVERSAL_EFFECTS = (CATE, ACD, LATE, LATE_IV)
CLASSICAL_CALIBRATORS = (ISOTONIC, BINNING, LINEAR, PLATT)


@dataclass(frozen=True)
class PipelineConfig:
    effect: str
    seed: SeedStream
    learners: LearnerBundle = field(default_factory=LearnerBundle)
    K: int = 5
    calibrator: str = ISOTONIC
    B: int | None = None
    Q: float | None = None
    eps: float = 0.05
    known_pi0: float | Predictor | None = None
    late_iv_sign: str = PAPER_SIGN
    chi_clip: float | None = None
    xi_slope: float = 1e-9
    distinct_noise: float = 1e-9

    def describe(self) -> dict:
        def learner_desc(lr: Learner | None):
            if lr is None:
                return None
            return {"kind": lr.kind, "depth": lr.depth, "rounds": lr.rounds,
                    "learning_rate": lr.learning_rate, "clip": lr.clip}

        return {
            "effect": self.effect,
            "K": self.K,
            "calibrator": self.calibrator,
            "B": self.B,
            "Q": self.Q,
            "eps": self.eps,
            "late_iv_sign": self.late_iv_sign,
            "chi_clip": self.chi_clip,
            "xi_slope": self.xi_slope,
            "distinct_noise": self.distinct_noise,
            "seed": {"master_seed": self.seed.master_seed, "stream_id": self.seed.stream_id},
            "learners": {
                "regressor": learner_desc(self.learners.regressor),
                "propensity": learner_desc(self.learners.propensity),
                "auxiliary": learner_desc(self.learners.auxiliary),
            },
        }


def _base_values(data: Dataset, base) -> np.ndarray:
    if base is None:
        return data.require_base()
    if isinstance(base, Predictor):
        return base.predict(data.X)
    return np.asarray(base, dtype=np.float64).ravel()


def _fit_classical(pseudo, cfg: PipelineConfig) -> CalibratorModel:
    if cfg.calibrator == ISOTONIC:
        return pava([(s.base_pred, s.chi, s.weight) for s in pseudo])
    if cfg.calibrator == BINNING:
        if cfg.B is None:
            raise ConfigError("binning calibration needs a bucket count B")
        return binning_fit(pseudo, cfg.B)
    if cfg.calibrator == LINEAR:
        return linear_fit(pseudo)
    if cfg.calibrator == PLATT:
        return platt_fit(pseudo)
    raise ConfigError(f"unknown calibrator {cfg.calibrator!r}")


def _halves(n: int, seed: SeedStream) -> tuple[np.ndarray, np.ndarray]:
    """50/50 split in shuffled order; odd n gives the extra point to nuisances."""
    perm = seed.rng().permutation(n)
    n_nuis = (n + 1) // 2
    return perm[:n_nuis], perm[n_nuis:]


def _audit(stages: list[tuple[str, np.ndarray, np.ndarray]]) -> list[dict]:
    out = []
    for name, train, apply_idx in stages:
        out.append({
            "stage": name,
            "n_train": int(len(train)),
            "n_apply": int(len(apply_idx)),
            "train_hash": hash_indices(train),
            "apply_hash": hash_indices(apply_idx),
            "disjoint": bool(np.intersect1d(train, apply_idx).size == 0),
        })
    return out


def _check_universal(cfg: PipelineConfig) -> None:
    if cfg.effect not in UNIVERSAL_EFFECTS:
        raise ConfigError(f"effect {cfg.effect!r} has no pseudo-outcome pipeline")
    if cfg.calibrator not in CLASSICAL_CALIBRATORS:
        raise ConfigError(f"unknown calibrator {cfg.calibrator!r}")


def calibrate_universal_split(data: Dataset, base, cfg: PipelineConfig):
    """Two-way split: nuisances on the first half, calibration on the second."""
    _check_universal(cfg)
    n = len(data)
    if n < 2:
        raise InvalidArgumentError("need at least two observations to split")
    nuis_idx, cal_idx = _halves(n, cfg.seed.child(0))
    base_vals = _base_values(data, base)
    g = fit_nuisances(
        data.subset(nuis_idx), cfg.effect, cfg.learners, cfg.seed.child(1),
        eps=cfg.eps, Q=cfg.Q, known_pi0=cfg.known_pi0, base=base_vals[nuis_idx],
    )
    cal = data.subset(cal_idx)
    pseudo = single_fit_pseudo(cal, base_vals[cal_idx], cfg.effect, g,
                               sign=cfg.late_iv_sign, chi_clip=cfg.chi_clip)
    model = _fit_classical(pseudo, cfg)
    report = {
        "algorithm": "universal-split",
        "config": cfg.describe(),
        "n": n,
        "splits": {"nuisance": int(len(nuis_idx)), "calibration": int(len(cal_idx))},
        "audit": _audit([("nuisance", nuis_idx, cal_idx)]),
        "diagnostics": _pseudo_diag(pseudo, cfg),
        "flags": ["inherited-buckets"] if model.meta.get("inherited_buckets") else [],
    }
    return model, report


def calibrate_universal_cross(data: Dataset, base, cfg: PipelineConfig):
    """K-fold cross calibration: out-of-fold pseudo-outcomes pooled into one fit."""
    _check_universal(cfg)
    if cfg.K < 2:
        raise InvalidArgumentError("cross calibration needs at least two folds")
    n = len(data)
    folds = split_folds(n, cfg.K, cfg.seed.child(0))
    base_vals = _base_values(data, base)
    fold_nuisances = cross_fit(
        data, cfg.effect, cfg.learners, cfg.K, cfg.seed.child(1), folds=folds,
        eps=cfg.eps, Q=cfg.Q, known_pi0=cfg.known_pi0, base=base_vals,
    )
    pseudo = make_pseudo_dataset(data, base_vals, cfg.effect, fold_nuisances, folds,
                                 sign=cfg.late_iv_sign, chi_clip=cfg.chi_clip)
    model = _fit_classical(pseudo, cfg)
    report = {
        "algorithm": "universal-cross",
        "config": cfg.describe(),
        "n": n,
        "splits": {"fold_sizes": folds.sizes()},
        "audit": _audit([(f"fold-{k}", folds.complement(k), folds.indices(k)) for k in range(folds.K)]),
        "diagnostics": _pseudo_diag(pseudo, cfg),
        "flags": [],
    }
    return model, report


def _pseudo_diag(pseudo, cfg: PipelineConfig) -> dict:
    chis = np.array([s.chi for s in pseudo])
    return {
        "chi_mean": float(chis.mean()),
        "chi_min": float(chis.min()),
        "chi_max": float(chis.max()),
        "chi_clipped": cfg.chi_clip is not None,
    }


def _qut_bound_losses(data: Dataset, idx: np.ndarray, g, Q: float):
    p_vals = g.p.predict(data.X[idx])
    f_vals = g.f.predict(data.X[idx])
    return [
        corrected_pinball_qut(Q, float(p), float(f), float(data.a[i]), float(data.y[i]))
        for p, f, i in zip(p_vals, f_vals, idx)
    ]


def _check_conditional(cfg: PipelineConfig) -> None:
    if cfg.effect != QUT:
        raise ConfigError("the conditional pipelines implement the quantile-under-treatment family")
    if cfg.Q is None:
        raise ConfigError("quantile level Q is required")
    if cfg.calibrator == BINNING:
        raise ConfigError("binning is not injective; use the three-way binning pathway (mode umb3)")
    if cfg.calibrator == PLATT:
        raise ConfigError("log-loss scaling does not apply to the quantile loss family")
    if cfg.calibrator not in (LINEAR, ISOTONIC):
        raise ConfigError(f"unknown calibrator {cfg.calibrator!r}")


def _finish_conditional(model: CalibratorModel, cfg: PipelineConfig) -> CalibratorModel:
    # isotonic fits are made strictly increasing so post-processing is injective
    if cfg.calibrator == ISOTONIC:
        return make_strict(model, cfg.xi_slope)
    return model


def calibrate_conditional_split(data: Dataset, base, cfg: PipelineConfig):
    """Two-way split for the corrected quantile loss; ERM calibration."""
    _check_conditional(cfg)
    n = len(data)
    if n < 2:
        raise InvalidArgumentError("need at least two observations to split")
    nuis_idx, cal_idx = _halves(n, cfg.seed.child(0))
    base_vals = _base_values(data, base)
    g = fit_nuisances(
        data.subset(nuis_idx), QUT, cfg.learners, cfg.seed.child(1),
        eps=cfg.eps, Q=cfg.Q, base=base_vals[nuis_idx],
    )
    losses = _qut_bound_losses(data, cal_idx, g, cfg.Q)
    model = erm_calibrate(list(zip(base_vals[cal_idx], losses)), cfg.calibrator, B=cfg.B)
    model = _finish_conditional(model, cfg)
    report = {
        "algorithm": "conditional-split",
        "config": cfg.describe(),
        "n": n,
        "splits": {"nuisance": int(len(nuis_idx)), "calibration": int(len(cal_idx))},
        "audit": _audit([("nuisance", nuis_idx, cal_idx)]),
        "diagnostics": {"cdf_nuisance_target": "base-model"},
        "flags": ["injectivity-strict-isotonic"] if cfg.calibrator == ISOTONIC else [],
    }
    return model, report


def calibrate_conditional_cross(data: Dataset, base, cfg: PipelineConfig):
    """K-fold cross variant: out-of-fold partial losses pooled into one ERM fit."""
    _check_conditional(cfg)
    if cfg.K < 2:
        raise InvalidArgumentError("cross calibration needs at least two folds")
    n = len(data)
    folds = split_folds(n, cfg.K, cfg.seed.child(0))
    base_vals = _base_values(data, base)
    fold_nuisances = cross_fit(
        data, QUT, cfg.learners, cfg.K, cfg.seed.child(1), folds=folds,
        eps=cfg.eps, Q=cfg.Q, base=base_vals,
    )
    by_fold = dict(fold_nuisances)
    pairs: list[tuple[float, object]] = [None] * n
    for k in range(folds.K):
        idx = folds.indices(k)
        for i, bl in zip(idx, _qut_bound_losses(data, idx, by_fold[k], cfg.Q)):
            pairs[i] = (float(base_vals[i]), bl)
    model = erm_calibrate(pairs, cfg.calibrator, B=cfg.B)
    model = _finish_conditional(model, cfg)
    report = {
        "algorithm": "conditional-cross",
        "config": cfg.describe(),
        "n": n,
        "splits": {"fold_sizes": folds.sizes()},
        "audit": _audit([(f"fold-{k}", folds.complement(k), folds.indices(k)) for k in range(folds.K)]),
        "diagnostics": {"cdf_nuisance_target": "base-model"},
        "flags": ["injectivity-strict-isotonic"] if cfg.calibrator == ISOTONIC else [],
    }
    return model, report


def three_way_umb(data: Dataset, base, cfg: PipelineConfig):
    """Three-way split: buckets from third 1, nuisances on third 2, levels on third 3.

    Fixing the bucket-membership map before nuisance fitting pins down the
    CDF-like nuisance the correction needs; tied bucket levels are
    perturbed to stay distinct.
    """
    if cfg.effect != QUT:
        raise ConfigError("the three-way binning pathway implements the quantile family")
    if cfg.Q is None or cfg.B is None:
        raise ConfigError("quantile level Q and bucket count B are required")
    n = len(data)
    perm = cfg.seed.child(0).rng().permutation(n)
    sizes = [n // 3 + (1 if r < n % 3 else 0) for r in range(3)]
    if min(sizes) == 0:
        raise InvalidArgumentError("each third needs at least one observation")
    thirds = [perm[:sizes[0]], perm[sizes[0]:sizes[0] + sizes[1]], perm[sizes[0] + sizes[1]:]]
    base_vals = _base_values(data, base)

    edges, edge_meta = umb_edges(base_vals[thirds[0]], cfg.B)
    g = fit_nuisances(
        data.subset(thirds[1]), QUT, cfg.learners, cfg.seed.child(1),
        eps=cfg.eps, Q=cfg.Q, base=base_vals[thirds[1]],
    )
    idx3 = thirds[2]
    losses = _qut_bound_losses(data, idx3, g, cfg.Q)
    buckets = _bucket_index(edges, base_vals[idx3])
    levels: list = []
    counts = []
    for b in range(edges.size + 1):
        members = [bl for bl, bb in zip(losses, buckets) if bb == b]
        counts.append(len(members))
        levels.append(bucket_minimize(members, what=f"bucket {b}") if members else None)
    levels, inherited = _fill_empty_levels(levels, np.asarray(counts))
    levels = ensure_distinct_levels(levels, cfg.distinct_noise, cfg.seed.child(2))
    model = CalibratorModel(
        BINNING,
        params={"edges": [float(e) for e in edges], "levels": levels},
        meta=dict(edge_meta, inherited_buckets=inherited, counts=counts, objective="pinball"),
    )
    report = {
        "algorithm": "three-way-umb",
        "config": cfg.describe(),
        "n": n,
        "splits": {"thirds": [int(s) for s in sizes]},
        "audit": _audit([
            ("edges", thirds[0], idx3),
            ("nuisance", thirds[1], idx3),
        ]),
        "diagnostics": {"bucket_counts": counts, "cdf_nuisance_target": "base-model"},
        "flags": ["inherited-buckets"] if inherited else [],
    }
    return model, report
