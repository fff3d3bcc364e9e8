import numpy as np
import pytest

from causalcal.data import Dataset, Observation, split_folds
from causalcal.errors import DataError, InvalidArgumentError, InvalidNuisanceError
from causalcal.learners import ArmPredictor, Predictor, constant_predictor
from causalcal.nuisance import ACD, CATE, LATE, LATE_IV, QUT, NuisanceSet
from causalcal.pseudo import (
    PseudoSample,
    chi_acd,
    chi_cate,
    chi_late,
    chi_late_iv,
    make_pseudo_dataset,
    single_fit_pseudo,
)
from causalcal.rng import derive_stream


def arm(fn):
    return ArmPredictor(lambda a, X: np.array([fn(ai, x) for ai, x in zip(a, X)]))


def scal(fn):
    return Predictor(lambda X: np.array([fn(x) for x in X]))


def cate_nuis(mu_fn, pi_fn):
    return NuisanceSet(CATE, {"mu": arm(mu_fn), "pi": scal(pi_fn)})


def obs(x, a, y, d=None):
    return Observation(x=np.atleast_1d(np.asarray(x, dtype=float)), a=a, y=y, d=d)


# ---------------------------------------------------------------------------
# average treatment effect


def test_chi_cate_zero_outcome_model():
    g = cate_nuis(lambda a, x: 0.0, lambda x: 0.5)
    assert chi_cate(g, obs(0.0, 1.0, 1.0)) == pytest.approx(2.0)


def test_chi_cate_zero_residual():
    g = cate_nuis(lambda a, x: 3.0 if a == 1.0 else 1.0, lambda x: 0.123)
    assert chi_cate(g, obs(0.0, 1.0, 3.0)) == pytest.approx(2.0)
    assert chi_cate(g, obs(0.0, 0.0, 1.0)) == pytest.approx(2.0)


def test_chi_cate_rejects_bad_propensity():
    g = cate_nuis(lambda a, x: 0.0, lambda x: 1.0)
    with pytest.raises(InvalidNuisanceError):
        chi_cate(g, obs(0.0, 1.0, 1.0))


# independent enumeration oracle: finite (A, Y) support at each atom
ATOMS = [
    # (x, pi0, {arm: [(prob, y), ...]})
    (0.0, 0.4, {0: [(0.5, 0.0), (0.5, 2.0)], 1: [(0.3, 1.0), (0.7, 3.0)]}),
    (1.0, 0.6, {0: [(1.0, -1.0)], 1: [(0.25, 0.0), (0.75, 4.0)]}),
    (2.0, 0.5, {0: [(0.2, 5.0), (0.8, 0.0)], 1: [(0.5, 1.0), (0.5, 2.0)]}),
]


def _true_mu(a, x):
    for xv, _, laws in ATOMS:
        if x[0] == xv:
            return sum(p * y for p, y in laws[int(a)])
    raise AssertionError


def _true_pi(x):
    for xv, pi, _ in ATOMS:
        if x[0] == xv:
            return pi
    raise AssertionError


def _theta0(xv):
    laws = dict((a[0], a[2]) for a in ATOMS)[xv]
    return sum(p * y for p, y in laws[1]) - sum(p * y for p, y in laws[0])


def _enum_mean_chi(g, xv, pi0, laws):
    total = 0.0
    for a_val, p_a in ((0, 1.0 - pi0), (1, pi0)):
        for p_y, y in laws[a_val]:
            total += p_a * p_y * chi_cate(g, obs(xv, float(a_val), y))
    return total


def test_chi_cate_double_robust_wrong_propensity():
    g = cate_nuis(_true_mu, lambda x: 0.3)
    for xv, pi0, laws in ATOMS:
        assert _enum_mean_chi(g, xv, pi0, laws) == pytest.approx(_theta0(xv), abs=1e-10)


def test_chi_cate_double_robust_wrong_outcome_model():
    rng = derive_stream(31, 0).rng()
    for _ in range(10):
        bumps = {(a, xv): rng.uniform() * 4 - 2 for a in (0, 1) for xv, _, _ in ATOMS}
        g = cate_nuis(lambda a, x: _true_mu(a, x) + bumps[(int(a), x[0])], _true_pi)
        for xv, pi0, laws in ATOMS:
            assert _enum_mean_chi(g, xv, pi0, laws) == pytest.approx(_theta0(xv), abs=1e-10)


def test_chi_cate_mean_shift_identities():
    # shifting the treated arm by c moves chi by exactly c * (1 - a / pi)
    g0 = cate_nuis(_true_mu, _true_pi)
    c = 0.37
    g1 = cate_nuis(lambda a, x: _true_mu(a, x) + (c if a == 1.0 else 0.0), _true_pi)
    gboth = cate_nuis(lambda a, x: _true_mu(a, x) + c, _true_pi)
    for a_val in (0.0, 1.0):
        z = obs(1.0, a_val, 2.0)
        pi = _true_pi(z.x)
        expected_arm1 = c * (1.0 - a_val / pi)
        assert chi_cate(g1, z) - chi_cate(g0, z) == pytest.approx(expected_arm1, abs=1e-12)
        expected_both = -c * (a_val / pi - (1.0 - a_val) / (1.0 - pi))
        assert chi_cate(gboth, z) - chi_cate(g0, z) == pytest.approx(expected_both, abs=1e-12)


# ---------------------------------------------------------------------------
# causal derivative


def acd_nuis(mu_fn, dmu_fn, score_fn):
    return NuisanceSet(ACD, {"mu": arm(mu_fn), "dmu": arm(dmu_fn), "score": arm(score_fn)})


def test_chi_acd_zero_residual():
    g = acd_nuis(lambda a, x: a * x[0], lambda a, x: x[0], lambda a, x: 1.5)
    z = obs(2.0, 0.3, 0.6)  # y = a * x exactly
    assert chi_acd(g, z) == pytest.approx(2.0)


def test_chi_acd_linear_outcome():
    c = 4.0
    g = acd_nuis(lambda a, x: a * c, lambda a, x: c, lambda a, x: 0.7)
    z = obs(0.0, 0.5, 3.0)
    assert chi_acd(g, z) == pytest.approx(c + 0.7 * (3.0 - 0.5 * c))


def test_chi_acd_rejects_nonfinite_score():
    g = acd_nuis(lambda a, x: 0.0, lambda a, x: 0.0, lambda a, x: np.inf)
    with pytest.raises(InvalidNuisanceError):
        chi_acd(g, obs(0.0, 0.5, 1.0))


def test_chi_acd_unbiased_monte_carlo():
    # treatment density prop to exp(k*a) on [0,1]: score = k, E[A] has closed form
    k = 1.3
    rng = derive_stream(55, 0).rng()
    n = 60_000
    u = rng.uniform(n)
    a_draws = np.log1p(u * (np.exp(k) - 1.0)) / k  # inverse CDF
    c, d = 1.8, -0.6
    eps = rng.normal(n)
    y = c * a_draws**2 + d * a_draws + eps
    g = acd_nuis(lambda a, x: c * a**2 + d * a,
                 lambda a, x: 2 * c * a + d,
                 lambda a, x: k)
    chis = np.array([chi_acd(g, obs(0.0, a_, y_)) for a_, y_ in zip(a_draws[:20000], y[:20000])])
    mean_a = (np.exp(k) * (k - 1.0) + 1.0) / (k * (np.exp(k) - 1.0))
    theta0 = 2 * c * mean_a + d
    se = chis.std(ddof=1) / np.sqrt(chis.size)
    assert abs(chis.mean() - theta0) < 3 * se + 1e-3


# ---------------------------------------------------------------------------
# local effect with known assignment propensity


def late_nuis(p_val, q_val, pi0):
    return NuisanceSet(LATE, {
        "p": constant_predictor(p_val), "q": constant_predictor(q_val),
        "pi0": constant_predictor(pi0),
    })


def test_chi_late_correction_vanishes():
    # y(d - pi0) / (a(d - pi0)) == p/q makes the correction zero
    g = late_nuis(2.0, 1.0, 0.5)
    z = obs(0.0, 1.0, 2.0, d=1.0)  # inner ratio = 2*(0.5)/(1*0.5) = 2 = p/q
    assert chi_late(g, z) == pytest.approx(2.0)


def test_chi_late_a_zero_uses_cancelled_form():
    g = late_nuis(2.0, 0.5, 0.4)
    z = obs(0.0, 0.0, 3.0, d=1.0)
    expected = 2.0 / 0.5 - 3.0 * (1.0 - 0.4) / 0.5
    assert chi_late(g, z) == pytest.approx(expected)


def test_chi_late_zero_q_raises():
    g = late_nuis(1.0, 0.0, 0.5)
    with pytest.raises(DataError):
        chi_late(g, obs(0.0, 1.0, 1.0, d=1.0), index=3)


# compliance model: d is the randomized assignment, a the received treatment
PI_ASSIGN = 0.6
TYPES = [("never", 0.3), ("complier", 0.5), ("always", 0.2)]
RECEIVED = {"never": (0, 0), "complier": (0, 1), "always": (1, 1)}
OUTCOME = {("never", 0): 1.0, ("complier", 0): 0.0, ("complier", 1): 2.0, ("always", 1): 3.0}


def _enum_late(fn):
    total = 0.0
    for d_val, p_d in ((0, 1.0 - PI_ASSIGN), (1, PI_ASSIGN)):
        for t, p_t in TYPES:
            a_val = RECEIVED[t][d_val]
            y = OUTCOME[(t, a_val)]
            total += p_d * p_t * fn(float(a_val), float(d_val), y)
    return total


def test_chi_late_enumeration_recovers_ratio():
    p0 = _enum_late(lambda a, d, y: y * (d - PI_ASSIGN)) / (PI_ASSIGN * (1 - PI_ASSIGN))
    q0 = _enum_late(lambda a, d, y: a * (d - PI_ASSIGN)) / (PI_ASSIGN * (1 - PI_ASSIGN))
    assert q0 == pytest.approx(0.5)
    g = late_nuis(p0, q0, PI_ASSIGN)
    mean_chi = _enum_late(lambda a, d, y: chi_late(g, obs(0.0, a, y, d=d)))
    assert mean_chi == pytest.approx(p0 / q0, abs=1e-12)
    assert p0 / q0 == pytest.approx(2.0)  # complier effect in this model


# ---------------------------------------------------------------------------
# IV pathway


def late_iv_nuis(mu_fn, pi_fn, zeta_fn):
    return NuisanceSet(LATE_IV, {"mu": arm(mu_fn), "pi": scal(pi_fn), "zeta_inst": scal(zeta_fn)})


def test_chi_late_iv_residual_identity():
    # y - mu(a, x) == tau * (a - pi) makes chi equal tau exactly
    zeta = 0.4
    mu1, mu0 = 3.0, 1.0
    tau = (mu1 - mu0) / zeta
    pi = 0.5
    g = late_iv_nuis(lambda a, x: mu1 if a == 1.0 else mu0, lambda x: pi, lambda x: zeta)
    a_val = 1.0
    y = mu1 + tau * (a_val - pi)
    z = obs(0.0, a_val, y, d=1.0)
    assert chi_late_iv(g, z) == pytest.approx(tau)


def test_chi_late_iv_zero_instrument_residual():
    zeta = 0.35
    g = late_iv_nuis(lambda a, x: 2.0 * a, lambda x: 0.5, lambda x: zeta)
    z = obs(0.0, 1.0, 5.0, d=zeta)  # continuous-instrument limit: d equals zeta
    assert chi_late_iv(g, z) == pytest.approx(2.0 / zeta)


def test_chi_late_iv_sign_switch_and_enumeration():
    mu = {0: 0.9, 1: 2.1}  # E[y | received a] in the compliance model above
    pi_received = 0.62     # P(a = 1) marginally
    g = late_iv_nuis(lambda a, x: mu[int(a)], lambda x: pi_received, lambda x: PI_ASSIGN)
    mean_paper = _enum_late(lambda a, d, y: chi_late_iv(g, obs(0.0, a, y, d=d), sign="paper"))
    mean_flipped = _enum_late(lambda a, d, y: chi_late_iv(g, obs(0.0, a, y, d=d), sign="flipped"))
    tau = (mu[1] - mu[0]) / PI_ASSIGN
    # the two conventions are mirror images around the plug-in term
    assert mean_paper + mean_flipped == pytest.approx(2 * tau, abs=1e-12)
    assert mean_paper != pytest.approx(mean_flipped)
    # sample mean over a large draw agrees with the enumeration
    rng = derive_stream(17, 0).rng()
    total, n = 0.0, 40_000
    d_draws = rng.bernoulli(np.full(n, PI_ASSIGN))
    t_draws = rng.uniform(n)
    for d_val, t_u in zip(d_draws, t_draws):
        t = "never" if t_u < 0.3 else ("complier" if t_u < 0.8 else "always")
        a_val = RECEIVED[t][int(d_val)]
        y = OUTCOME[(t, a_val)]
        total += chi_late_iv(g, obs(0.0, float(a_val), y, d=float(d_val)), sign="paper")
    assert total / n == pytest.approx(mean_paper, abs=0.05)


def test_chi_late_iv_rejects_bad_zeta():
    g = late_iv_nuis(lambda a, x: 0.0, lambda x: 0.5, lambda x: 0.0)
    with pytest.raises(InvalidNuisanceError):
        chi_late_iv(g, obs(0.0, 1.0, 1.0, d=1.0))


# ---------------------------------------------------------------------------
# batched transformation


def _toy_data(n=10):
    X = np.arange(n, dtype=float).reshape(-1, 1)
    a = np.tile([0.0, 1.0], n // 2)
    y = np.arange(n, dtype=float)
    return Dataset(X, a, y)


def test_make_pseudo_rejects_single_fold():
    data = _toy_data()
    folds = split_folds(len(data), 1, derive_stream(0, 0))
    g = cate_nuis(lambda a, x: 0.0, lambda x: 0.5)
    with pytest.raises(InvalidArgumentError):
        make_pseudo_dataset(data, np.zeros(len(data)), CATE, [(0, g)], folds)


def test_make_pseudo_uses_out_of_fold_models():
    data = _toy_data(10)
    folds = split_folds(10, 2, derive_stream(4, 2))
    # fold-specific constant outcome models reveal which model touched each row
    g_for_fold = {
        k: cate_nuis(lambda a, x, k=k: float(k * 100), lambda x: 0.5) for k in (0, 1)
    }
    pseudo = make_pseudo_dataset(data, np.zeros(10), CATE, list(g_for_fold.items()), folds)
    for k in (0, 1):
        for i in folds.indices(k):
            z = data.row(i)
            assert pseudo[i].chi == pytest.approx(chi_cate(g_for_fold[k], z))


def test_make_pseudo_oracle_matches_single_fit():
    data = _toy_data(12)
    folds = split_folds(12, 3, derive_stream(4, 3))
    g = cate_nuis(lambda a, x: x[0] * a, lambda x: 0.4)
    pooled = make_pseudo_dataset(data, np.zeros(12), CATE, [(k, g) for k in range(3)], folds)
    single = single_fit_pseudo(data, np.zeros(12), CATE, g)
    assert [s.chi for s in pooled] == pytest.approx([s.chi for s in single])


def test_pseudo_clip_is_applied():
    data = _toy_data(10)
    g = cate_nuis(lambda a, x: 0.0, lambda x: 0.05)
    raw = single_fit_pseudo(data, np.zeros(10), CATE, g)
    clipped = single_fit_pseudo(data, np.zeros(10), CATE, g, chi_clip=1.0)
    assert max(abs(s.chi) for s in raw) > 1.0
    assert max(abs(s.chi) for s in clipped) <= 1.0


def test_pseudo_sample_fields():
    s = PseudoSample(1.0, 2.0)
    assert s.weight == 1.0
