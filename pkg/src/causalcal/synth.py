"""Synthetic data-generating processes and seeded experiment runners."""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .calibrators import LINEAR
from .data import Dataset
from .errors import InvalidArgumentError
from .learners import ArmPredictor, Learner, Predictor
from .losses import pinball_qut
from .metrics import binned_cal_error, binned_qut_error
from .nuisance import CATE, QUT, LearnerBundle, NuisanceSet, cross_fit
from .oracles import DiscreteOracle, cate_oracle
from .pipelines import PipelineConfig, calibrate_universal_cross, calibrate_conditional_cross
from .pseudo import make_pseudo_dataset
from .data import split_folds
from .learners import fit_propensity, fit_quantile_regressor, fit_regressor
from .rng import SeedStream

DIM = 100
SPARSE = 20
CLIP = 0.05


@dataclass(frozen=True)
class QutDgp:
    """Sparse linear Gaussian design with clipped logistic treatment.

    Covariates are standard normal in 100 dimensions; the outcome and
    propensity slopes have exactly 20 nonzero coordinates.  Potential
    outcomes under treatment and control are equal by construction, so the
    observed outcome is treatment-independent given covariates.
    """

    beta_y: np.ndarray = field(repr=False)
    beta_pi: np.ndarray = field(repr=False)
    clip: float = CLIP

    @staticmethod
    def draw(seed: SeedStream) -> "QutDgp":
        rng = seed.rng()
        beta_y = np.zeros(DIM)
        beta_pi = np.zeros(DIM)
        beta_y[:SPARSE] = rng.normal(SPARSE)
        beta_pi[:SPARSE] = rng.normal(SPARSE)
        return QutDgp(beta_y=beta_y, beta_pi=beta_pi)

    def propensity(self, X: np.ndarray) -> np.ndarray:
        raw = 1.0 / (1.0 + np.exp(np.clip(X @ self.beta_pi, -500.0, 500.0)))
        return np.clip(raw, self.clip, 1.0 - self.clip)

    def inverse_propensity(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / self.propensity(X)

    def outcome_mean(self, X: np.ndarray) -> np.ndarray:
        return X @ self.beta_y

    def true_quantile(self, X: np.ndarray, Q: float) -> np.ndarray:
        return self.outcome_mean(X) + ndtri(Q)

    def sample(self, n: int, seed: SeedStream) -> Dataset:
        """Draw n rows; generation order is covariates, noise, treatment."""
        if n < 1:
            raise InvalidArgumentError("sample size must be positive")
        rng = seed.rng()
        X = rng.normal(n * DIM).reshape(n, DIM)
        eps = rng.normal(n)
        a = rng.bernoulli(self.propensity(X))
        y = self.outcome_mean(X) + eps
        return Dataset(X, a, y)

    def oracle_learners(self, Q: float, base_fn) -> LearnerBundle:
        """True-nuisance learners: exact propensity and exact outcome CDF at base."""
        return LearnerBundle(
            propensity=Learner(kind="oracle", fn=self.propensity, clip=self.clip),
            auxiliary=Learner(
                kind="oracle",
                fn=lambda X: ndtr(np.asarray(base_fn(X)) - self.outcome_mean(X)),
            ),
        )


def sample_qut(n: int, dgp: QutDgp, seed: SeedStream) -> Dataset:
    return dgp.sample(n, seed)


def true_qut_quantile(dgp: QutDgp, x: np.ndarray, Q: float) -> float:
    if not (0.0 < Q < 1.0):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    return float(dgp.true_quantile(np.atleast_2d(x), Q)[0])


@dataclass(frozen=True)
class DiscreteCateDgp:
    """Finite-support binary-treatment design backing the enumeration oracle."""

    xs: tuple
    px: tuple
    pi: tuple
    effects: tuple
    control_means: tuple
    noise: tuple = ((0.25, -1.0), (0.5, 0.0), (0.25, 1.0))

    @staticmethod
    def default() -> "DiscreteCateDgp":
        return DiscreteCateDgp(
            xs=(-2.0, -1.0, 0.0, 1.0, 2.0),
            px=(0.15, 0.2, 0.3, 0.2, 0.15),
            pi=(0.3, 0.4, 0.5, 0.6, 0.7),
            effects=(-1.0, -0.5, 0.0, 0.75, 1.5),
            control_means=(-1.0, -0.5, 0.0, 0.5, 1.0),
        )

    def theta0(self, i: int) -> float:
        return self.effects[i]

    def theta0_of_x(self, X: np.ndarray) -> np.ndarray:
        lookup = {x: t for x, t in zip(self.xs, self.effects)}
        return np.array([lookup[float(v)] for v in np.asarray(X).ravel()])

    def outcome_law(self, i: int, arm: float):
        mean = self.control_means[i] + (self.effects[i] if arm == 1.0 else 0.0)
        return [(p, mean + e) for p, e in self.noise]

    def to_oracle(self) -> DiscreteOracle:
        laws = [
            {0: self.outcome_law(i, 0.0), 1: self.outcome_law(i, 1.0)}
            for i in range(len(self.xs))
        ]
        return cate_oracle([[x] for x in self.xs], self.px, self.pi, laws)

    def true_nuisances(self) -> NuisanceSet:
        mu_map = {
            (x, arm): self.control_means[i] + (self.effects[i] if arm else 0.0)
            for i, x in enumerate(self.xs)
            for arm in (0, 1)
        }
        pi_map = {x: p for x, p in zip(self.xs, self.pi)}
        mu = ArmPredictor(
            lambda a, X: np.array([mu_map[(float(x[0]), int(ai))] for ai, x in zip(a, X)]),
            name="true-mu",
        )
        pi = Predictor(lambda X: np.array([pi_map[float(x[0])] for x in X]), name="true-pi")
        return NuisanceSet(CATE, {"mu": mu, "pi": pi})

    def sample(self, n: int, seed: SeedStream) -> Dataset:
        rng = seed.rng()
        px = np.asarray(self.px)
        cdf = np.cumsum(px)
        atom = np.searchsorted(cdf, rng.uniform(n), side="right")
        atom = np.minimum(atom, len(self.xs) - 1)
        a = rng.bernoulli(np.asarray(self.pi)[atom])
        noise_p = np.cumsum([p for p, _ in self.noise])
        noise_v = np.array([v for _, v in self.noise])
        eps = noise_v[np.minimum(np.searchsorted(noise_p, rng.uniform(n), side="right"),
                                 len(self.noise) - 1)]
        means = np.asarray(self.control_means)[atom] + a * np.asarray(self.effects)[atom]
        X = np.asarray(self.xs)[atom].reshape(-1, 1)
        return Dataset(X, a, means + eps)


def biased_base_predictor(dgp: DiscreteCateDgp, scale: float = 0.4, shift: float = 1.0) -> Predictor:
    """Deliberately miscalibrated base model: an affine distortion of the truth."""
    return Predictor(lambda X: scale * dgp.theta0_of_x(X) + shift, name="biased-base")


# ---------------------------------------------------------------------------
# quantile experiment


def _quantile_rep(args) -> dict:
    (dgp_seed, rep_seed, N, Q, reps_tag, base_learners, calib_learners, K, calibrator, test_n) = args
    dgp = QutDgp.draw(dgp_seed)
    train = dgp.sample(N, rep_seed.child(1))
    folds = split_folds(N, K, rep_seed.child(2))
    p_hat = np.empty(N)
    for k in range(K):
        pi_k = fit_propensity(train.subset(folds.complement(k)), "a",
                              base_learners.propensity, CLIP, rep_seed.child(10 + k))
        idx = folds.indices(k)
        p_hat[idx] = 1.0 / pi_k.predict(train.X[idx])
    treated = np.nonzero(train.a == 1.0)[0]
    base = fit_quantile_regressor(
        train.subset(treated), train.y[treated], Q, base_learners.regressor,
        rep_seed.child(3), sample_weight=p_hat[treated],
    )

    calib = dgp.sample(N, rep_seed.child(4))
    cal_preds = base.predict(calib.X)
    cfg = PipelineConfig(
        effect=QUT, seed=rep_seed.child(5), learners=calib_learners, K=K,
        calibrator=calibrator, Q=Q, eps=CLIP,
    )
    model, _ = calibrate_conditional_cross(calib.with_base(cal_preds), None, cfg)

    test = dgp.sample(test_n or N, rep_seed.child(6))
    pre = base.predict(test.X)
    post = model.apply(pre)
    p0 = dgp.inverse_propensity(test.X)
    pre_err = binned_qut_error(pre, test.a, test.y, p0, Q, cal_preds=cal_preds).estimate
    post_err = binned_qut_error(post, test.a, test.y, p0, Q,
                                cal_preds=model.apply(cal_preds)).estimate
    losses = [pinball_qut(Q, float(p), float(a), float(y))
              for p, a, y in zip(p0, test.a, test.y)]
    pre_loss = float(np.mean([bl.value(v) for bl, v in zip(losses, pre)]))
    post_loss = float(np.mean([bl.value(v) for bl, v in zip(losses, post)]))
    return {
        "N": N, "Q": Q, "rep": reps_tag,
        "pre_error": pre_err, "post_error": post_err,
        "pre_loss": pre_loss, "post_loss": post_loss,
    }


def _mean_band(values: np.ndarray) -> dict:
    m = float(values.mean())
    if values.size > 1:
        half = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size)
    else:
        half = 0.0
    return {"mean": m, "lo": m - half, "hi": m + half}


def run_quantile_experiment(
    n_grid, q_set, reps: int, seed: SeedStream,
    base_learners: LearnerBundle | None = None,
    calib_learners: LearnerBundle | None = None,
    K: int = 5, calibrator: str = LINEAR, test_n: int | None = None,
    workers: int = 1,
) -> dict:
    """Per (N, Q, rep): pre/post binned calibration error and true-nuisance loss.

    Each rep draws fresh slope vectors, a training sample for the base
    model, a calibration sample for cross calibration, and a held-out
    test sample.  Failed reps are recorded, not fatal.
    """
    base_learners = base_learners or LearnerBundle()
    calib_learners = calib_learners or LearnerBundle()
    jobs = []
    for N in n_grid:
        if N < 2 * K:
            raise InvalidArgumentError(f"N={N} is too small for {K}-fold cross fitting")
        for Q in q_set:
            for rep in range(reps):
                rep_seed = seed.child(hash_triple(N, int(Q * 10000), rep))
                jobs.append((rep_seed.child(0), rep_seed, N, Q, rep,
                             base_learners, calib_learners, K, calibrator, test_n))
    rows = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_quantile_rep_safe, jobs))
    else:
        results = [_quantile_rep_safe(j) for j in jobs]
    rows = sorted(results, key=lambda r: (r["N"], r["Q"], r["rep"]))
    summary = []
    for N in n_grid:
        for Q in q_set:
            ok = [r for r in rows if r["N"] == N and r["Q"] == Q and "failed" not in r]
            if not ok:
                continue
            entry = {"N": N, "Q": Q, "reps": len(ok)}
            for key in ("pre_error", "post_error", "pre_loss", "post_loss"):
                entry[key] = _mean_band(np.array([r[key] for r in ok]))
            summary.append(entry)
    return {"rows": rows, "summary": summary}


def _quantile_rep_safe(args) -> dict:
    try:
        return _quantile_rep(args)
    except Exception as exc:  # failed reps are recorded, not fatal
        _, _, N, Q, rep, *_ = args
        return {"N": N, "Q": Q, "rep": rep, "failed": f"{type(exc).__name__}: {exc}"}


def hash_triple(a: int, b: int, c: int) -> int:
    """Injective packing of small nonnegative ints into one stream slot."""
    return ((a & 0xFFFFF) << 40) | ((b & 0xFFFFF) << 20) | (c & 0xFFFFF)


# ---------------------------------------------------------------------------
# average-effect experiment


def _box_summary(values: np.ndarray) -> dict:
    """Box-plot statistics; whiskers are extremes within median +- 1.5 IQR."""
    med = float(np.median(values))
    q1 = float(np.quantile(values, 0.25))
    q3 = float(np.quantile(values, 0.75))
    lo, hi = med - 1.5 * (q3 - q1), med + 1.5 * (q3 - q1)
    inside = values[(values >= lo) & (values <= hi)]
    if inside.size == 0:
        inside = values
    return {"median": med, "q1": q1, "q3": q3,
            "whisker_low": float(inside.min()), "whisker_high": float(inside.max())}


def run_cate_experiment(
    reps: int, seed: SeedStream,
    dgp: DiscreteCateDgp | None = None,
    data: Dataset | None = None,
    n: int = 2000,
    fractions: tuple = (0.6, 0.25, 0.15),
    calibrators: tuple = ("isotonic", "binning", "linear"),
    B: int = 20,
    K: int = 5,
    learners: LearnerBundle | None = None,
    base_mode: str = "fit",
    workers: int = 1,
) -> dict:
    """Quartile-binned error of base vs calibrated models over repeated splits.

    ``base_mode`` is either "fit" (train the base on the first split from
    cross-fitted pseudo-outcomes) or "biased" (use a deliberately
    distorted version of the true effect; synthetic DGP only).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError("split fractions must sum to 1")
    if dgp is None and data is None:
        dgp = DiscreteCateDgp.default()
    learners = learners or LearnerBundle()
    jobs = [(dgp, data, n, fractions, calibrators, B, K, learners, base_mode,
             seed.child(rep), rep) for rep in range(reps)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows_nested = list(pool.map(_cate_rep_safe, jobs))
    else:
        rows_nested = [_cate_rep_safe(j) for j in jobs]
    rows = [r for rep_rows in rows_nested for r in rep_rows]
    rows.sort(key=lambda r: (r["rep"], r["model"]))
    summary = {}
    for name in ("base",) + tuple(calibrators):
        vals = np.array([r["error"] for r in rows if r["model"] == name and "failed" not in r])
        if vals.size:
            summary[name] = _box_summary(vals)
    return {"rows": rows, "summary": summary}


def _cate_rep_safe(args) -> list[dict]:
    try:
        return _cate_rep(args)
    except Exception as exc:
        *_, rep = args
        return [{"rep": rep, "model": "all", "error": float("nan"),
                 "failed": f"{type(exc).__name__}: {exc}"}]


def _cate_rep(args) -> list[dict]:
    (dgp, fixed_data, n, fractions, calibrators, B, K, learners, base_mode, rep_seed, rep) = args
    data = fixed_data if fixed_data is not None else dgp.sample(n, rep_seed.child(0))
    n_all = len(data)
    perm = rep_seed.child(1).rng().permutation(n_all)
    n_train = int(round(fractions[0] * n_all))
    n_cal = int(round(fractions[1] * n_all))
    train_idx = perm[:n_train]
    cal_idx = perm[n_train:n_train + n_cal]
    test_idx = perm[n_train + n_cal:]
    train, cal, test = data.subset(train_idx), data.subset(cal_idx), data.subset(test_idx)

    if base_mode == "biased":
        if dgp is None:
            raise InvalidArgumentError("the biased base mode needs a synthetic DGP")
        base = biased_base_predictor(dgp)
    elif base_mode == "fit":
        folds = split_folds(len(train), K, rep_seed.child(2))
        fold_nuisances = cross_fit(train, CATE, learners, K, rep_seed.child(3), folds=folds)
        pseudo = make_pseudo_dataset(train, np.zeros(len(train)), CATE, fold_nuisances, folds)
        chis = np.array([s.chi for s in pseudo])
        base = fit_regressor(train, chis, learners.regressor, rep_seed.child(4))
    else:
        raise InvalidArgumentError(f"unknown base mode {base_mode!r}")

    cal_preds = base.predict(cal.X)
    test_preds = base.predict(test.X)

    # test-set pseudo-outcomes from nuisances cross-fitted within the test split
    test_folds = split_folds(len(test), K, rep_seed.child(5))
    test_nuis = cross_fit(test, CATE, learners, K, rep_seed.child(6), folds=test_folds)
    test_chi = np.array([
        s.chi for s in make_pseudo_dataset(test, test_preds, CATE, test_nuis, test_folds)
    ])

    rows = [{
        "rep": rep, "model": "base",
        "error": binned_cal_error(test_preds, test_chi, cal_preds=cal_preds).estimate,
    }]
    for name in calibrators:
        cfg = PipelineConfig(effect=CATE, seed=rep_seed.child(7), learners=learners,
                             K=K, calibrator=name, B=B)
        model, _ = calibrate_universal_cross(cal.with_base(cal_preds), None, cfg)
        post_test = model.apply(test_preds)
        err = binned_cal_error(post_test, test_chi, cal_preds=model.apply(cal_preds)).estimate
        rows.append({"rep": rep, "model": name, "error": err})
    return rows
