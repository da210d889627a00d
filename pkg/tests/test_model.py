import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from runoff.model import (
    PRECISIONS,
    Layout,
    ModelSpec,
    ParameterState,
    Variant,
    log_likelihood,
    log_mean,
    log_posterior_unnormalized,
    log_prior,
    negbin_logpmf,
    rw1_logdensity,
)
from runoff.spatial import build_iar
from runoff.triangle import RegionMap, ReportingTriangle, censoring_mask

LOG2PI = math.log(2 * math.pi)


def test_negbin_examples():
    assert negbin_logpmf(0, 1.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-15)
    for lam, phi in [(0.3, 5.0), (12.0, 0.7), (100.0, 1e6)]:
        assert negbin_logpmf(0, lam, phi) == pytest.approx(phi * math.log(phi / (phi + lam)), rel=1e-12)


def test_negbin_matches_scipy():
    n = np.arange(200)
    for lam, phi in [(3.7, 2.2), (0.5, 50.0), (40.0, 1.3)]:
        ref = stats.nbinom.logpmf(n, phi, phi / (phi + lam))
        np.testing.assert_allclose(negbin_logpmf(n, lam, phi), ref, rtol=1e-10, atol=1e-10)


def test_negbin_sums_to_one_and_moments():
    lam, phi = 3.7, 2.2
    n = np.arange(5001)
    p = np.exp(negbin_logpmf(n, lam, phi))
    assert abs(p.sum() - 1.0) < 1e-9
    assert abs((n * p).sum() - lam) < 1e-9
    assert abs((n * n * p).sum() - lam**2 - lam * (1 + lam / phi)) < 1e-8


def test_negbin_gamma_poisson_simulation():
    lam, phi = 3.7, 2.2
    rng = np.random.default_rng(0)
    x = rng.poisson(rng.gamma(phi, lam / phi, size=10**6))
    var = lam * (1 + lam / phi)
    assert abs(x.mean() - lam) < 4 * math.sqrt(var / x.size)
    # variance of the sample variance via the fourth central moment
    m4 = np.mean((x - x.mean()) ** 4)
    assert abs(x.var() - var) < 4 * math.sqrt((m4 - var**2) / x.size)


def test_negbin_large_phi_is_poisson():
    n = np.arange(30)
    np.testing.assert_allclose(negbin_logpmf(n, 4.0, 1e10), stats.poisson.logpmf(n, 4.0), atol=1e-8)


@pytest.mark.parametrize("lam,phi", [(0.0, 1.0), (1.0, 0.0), (np.inf, 1.0), (1.0, np.nan), (-1.0, 1.0)])
def test_negbin_rejects_bad_parameters(lam, phi):
    with pytest.raises(ValueError):
        negbin_logpmf(1, lam, phi)


def test_variant_blocks():
    want = {
        "M0": (False, False, False), "M1": (True, False, False), "M2": (False, True, False),
        "M3": (True, True, False), "M4": (False, False, True), "M5": (True, False, True),
        "M6": (False, True, True), "M7": (True, True, True),
    }
    for name, (iar, ats, bds) in want.items():
        spec = ModelSpec(name, 5, 2, 3)
        assert (spec.has_iar, spec.has_alpha_ts, spec.has_beta_ds) == (iar, ats, bds)
        assert spec.has_delta_ind
    base = ModelSpec("BASE", 5, 2)
    assert not (base.has_iar or base.has_alpha_ts or base.has_beta_ds or base.has_delta_ind)
    assert base.active_precisions() == ("tau_alpha", "tau_beta")
    with pytest.raises(ValueError):
        ModelSpec("BASE", 5, 2, 2)


def test_spec_roundtrip():
    spec = ModelSpec("M5", 12, 4, 3, 2, hyperprior=(0.5, 0.25))
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_log_mean_examples():
    spec = ModelSpec("BASE", 4, 2)
    assert log_mean(ParameterState.zeros(spec, mu=1.5), spec, None, 0, 0) == 1.5
    st_ = ParameterState.zeros(spec, alpha=[0.0, 0.2, 0.0, 0.0], beta=[0.0, 0.0, -0.3])
    assert log_mean(st_, spec, None, 1, 2) == pytest.approx(-0.1, abs=1e-15)
    with pytest.raises(IndexError):
        log_mean(st_, spec, None, 4, 0)
    with pytest.raises(IndexError):
        log_mean(st_, spec, None, 0, 3)


def random_state(spec, rng):
    T, K, S, p = spec.T, spec.K, spec.S, spec.covariate_count
    st_ = ParameterState.zeros(spec, mu=rng.normal())
    st_.gamma = rng.normal(size=p)
    st_.alpha = rng.normal(size=T)
    st_.beta = rng.normal(size=K)
    if spec.has_alpha_ts:
        st_.alpha_ts = rng.normal(size=(T, S))
    if spec.has_beta_ds:
        st_.beta_ds = rng.normal(size=(K, S))
    if spec.has_delta_ind:
        st_.delta_ind = rng.normal(size=S)
    if spec.has_iar:
        d = rng.normal(size=S)
        st_.delta_iar = d - d.mean()
    for name in PRECISIONS + ("phi",):
        setattr(st_, name, float(rng.gamma(2.0, 1.0)))
    return st_


def test_log_mean_m4_against_summation():
    rng = np.random.default_rng(3)
    spec = ModelSpec("M4", 6, 3, 4, covariate_count=2)
    st_ = random_state(spec, rng)
    X = rng.normal(size=(6, 4, 4, 2))
    for t in range(6):
        for d in range(4):
            for s in range(4):
                want = st_.mu + X[t, d, s, 0] * st_.gamma[0] + X[t, d, s, 1] * st_.gamma[1]
                want += st_.alpha[t] + st_.beta[d] + st_.beta_ds[d, s] + st_.delta_ind[s]
                assert log_mean(st_, spec, X, t, d, s) == pytest.approx(want, abs=1e-12)


def test_rw1_examples():
    assert rw1_logdensity([0.0], 1.0, 1e-3) == pytest.approx(0.5 * math.log(1e-3 / (2 * math.pi)), abs=1e-14)
    for n in (1, 2, 7):
        want = 0.5 * math.log(1e-3 / (2 * math.pi)) + (n - 1) * 0.5 * math.log(2.5 / (2 * math.pi))
        assert rw1_logdensity(np.zeros(n), 2.5, 1e-3) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError):
        rw1_logdensity([0.0, 1.0], 0.0, 1e-3)


def test_rw1_against_scalar_densities():
    rng = np.random.default_rng(9)
    x = rng.normal(size=10)
    tau = 3.3
    want = stats.norm.logpdf(x[0], 0, 1 / math.sqrt(1e-3))
    for i in range(1, 10):
        want += stats.norm.logpdf(x[i], x[i - 1], 1 / math.sqrt(tau))
    assert abs(rw1_logdensity(x, tau, 1e-3) - want) < 1e-12


def gamma_lp(x, a=1e-3, b=1e-3):
    return stats.gamma.logpdf(x, a, scale=1 / b)


def test_log_prior_base_closed_form():
    T, D = 6, 3
    spec = ModelSpec("BASE", T, D)
    st_ = ParameterState.zeros(spec)
    anchor = 0.5 * math.log(1e-3 / (2 * math.pi))
    want = 3 * gamma_lp(1.0) + 2 * anchor + (T - 1 + D) * 0.5 * math.log(1 / (2 * math.pi))
    want += stats.norm.logpdf(0.0, 0, math.sqrt(1e3))
    assert log_prior(st_, spec) == pytest.approx(want, abs=1e-10)


def test_log_prior_doubling_tau_alpha_touches_alpha_only():
    rng = np.random.default_rng(1)
    spec = ModelSpec("BASE", 8, 3)
    a = random_state(spec, rng)
    b = a.copy()
    b.tau_alpha *= 2
    delta = log_prior(b, spec) - log_prior(a, spec)
    want = (rw1_logdensity(a.alpha, b.tau_alpha, 1e-3) - rw1_logdensity(a.alpha, a.tau_alpha, 1e-3)
            + gamma_lp(b.tau_alpha) - gamma_lp(a.tau_alpha))
    assert delta == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("variant", ["M4", "M7"])
def test_log_prior_term_by_term(variant):
    rng = np.random.default_rng(4)
    rm = RegionMap.chain(5)
    spec = ModelSpec(variant, 7, 3, 5, covariate_count=1)
    st_ = random_state(spec, rng)
    sd = lambda tau: 1 / math.sqrt(tau)  # noqa: E731
    want = stats.norm.logpdf(st_.mu, 0, math.sqrt(1e3)) + stats.norm.logpdf(st_.gamma, 0, math.sqrt(1e3)).sum()
    for x, tau in ((st_.alpha, st_.tau_alpha), (st_.beta, st_.tau_beta)):
        want += stats.norm.logpdf(x[0], 0, sd(1e-3)) + stats.norm.logpdf(np.diff(x), 0, sd(tau)).sum()
    want += stats.norm.logpdf(st_.delta_ind, 0, sd(st_.tau_delta_ind)).sum()
    if spec.has_beta_ds:
        want += stats.norm.logpdf(st_.beta_ds, 0, sd(st_.tau_beta_ds)).sum()
    if spec.has_alpha_ts:
        want += stats.norm.logpdf(st_.alpha_ts, 0, sd(st_.tau_alpha_ts)).sum()
    if spec.has_iar:
        d = st_.delta_iar
        ss = sum((d[i] - d[i + 1]) ** 2 for i in range(4))
        want += 0.5 * 4 * math.log(st_.tau_delta_iar) - 0.5 * st_.tau_delta_iar * ss
    for name in spec.active_precisions() + ("phi",):
        want += gamma_lp(getattr(st_, name))
    assert abs(log_prior(st_, spec, rm) - want) < 1e-10
    assert abs(log_prior(st_, spec, build_iar(rm)) - want) < 1e-10


def test_state_check():
    spec = ModelSpec("M4", 5, 2, 3)
    st_ = ParameterState.zeros(spec)
    st_.alpha_ts[0, 0] = 1.0
    with pytest.raises(ValueError, match="alpha_ts"):
        log_prior(st_, spec)
    st_ = ParameterState.zeros(spec, phi=-1.0)
    with pytest.raises(ValueError, match="phi"):
        st_.check(spec)
    with pytest.raises(ValueError, match="shape"):
        ParameterState.zeros(ModelSpec("M4", 6, 2, 3)).check(spec)


def test_layout_roundtrip():
    rng = np.random.default_rng(2)
    spec = ModelSpec("M7", 5, 2, 3, covariate_count=2)
    st_ = random_state(spec, rng)
    lay = Layout(spec)
    back = lay.unpack(lay.pack(st_), st_.precisions(), st_.phi)
    for name in ("mu", "gamma", "alpha", "beta", "alpha_ts", "beta_ds", "delta_ind", "delta_iar", "phi"):
        np.testing.assert_array_equal(getattr(back, name), getattr(st_, name))


def test_likelihood_single_zero_cell():
    spec = ModelSpec("BASE", 2, 1)
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    tri = ReportingTriangle(np.zeros((2, 2), int), mask)
    st_ = ParameterState.zeros(spec, mu=0.7, phi=3.0)
    lam = math.exp(0.7)
    assert log_likelihood(st_, spec, None, tri) == pytest.approx(3.0 * math.log(3.0 / (3.0 + lam)), abs=1e-13)


def test_likelihood_empty_mask_is_zero():
    spec = ModelSpec("BASE", 3, 1)
    tri = ReportingTriangle(np.zeros((3, 2), int), np.zeros((3, 2), bool))
    assert log_likelihood(ParameterState.zeros(spec), spec, None, tri) == 0.0


def test_likelihood_against_loop():
    rng = np.random.default_rng(8)
    T, D = 10, 3
    spec = ModelSpec("BASE", T, D)
    st_ = random_state(spec, rng)
    counts = rng.integers(0, 30, size=(T, D + 1))
    tri = ReportingTriangle(counts, censoring_mask(T, D)[:, :, 0])
    want = 0.0
    for t in range(T):
        for d in range(D + 1):
            if t + d <= T - 1:
                lam = math.exp(st_.mu + st_.alpha[t] + st_.beta[d])
                want += stats.nbinom.logpmf(counts[t, d], st_.phi, st_.phi / (st_.phi + lam))
    assert abs(log_likelihood(st_, spec, None, tri) - want) < 1e-10


def test_posterior_is_prior_plus_likelihood():
    rng = np.random.default_rng(0)
    rm = RegionMap.chain(3)
    spec = ModelSpec("M3", 6, 2, 3)
    st_ = random_state(spec, rng)
    tri = ReportingTriangle(rng.integers(0, 9, (6, 3, 3)), censoring_mask(6, 2, 3))
    lp = log_posterior_unnormalized(st_, spec, None, tri, rm)
    assert lp == log_prior(st_, spec, rm) + log_likelihood(st_, spec, None, tri)


def test_mu_shift_scales_lambda():
    spec = ModelSpec("BASE", 4, 1)
    counts = np.array([[3, 1], [0, 2], [5, 0], [7, 0]])
    tri = ReportingTriangle(counts, censoring_mask(4, 1)[:, :, 0])
    a = ParameterState.zeros(spec, mu=0.0, phi=2.0)
    b = ParameterState.zeros(spec, mu=1.0, phi=2.0)
    n = counts[tri.mask[:, :, 0]]
    want = negbin_logpmf(n, math.e, 2.0).sum() - negbin_logpmf(n, 1.0, 2.0).sum()
    assert log_likelihood(b, spec, None, tri) - log_likelihood(a, spec, None, tri) == pytest.approx(want, abs=1e-12)


def test_evidence_grid_converges():
    # (mu, log phi) posterior of a T=3, D=1 triangle with the other effects at 0
    spec = ModelSpec("BASE", 3, 1)
    tri = ReportingTriangle(np.array([[9, 4], [12, 3], [7, 0]]), censoring_mask(3, 1)[:, :, 0])

    def evidence(n):
        mus = np.linspace(0.5, 4.0, n)
        lphis = np.linspace(-3.0, 7.0, n)
        vals = np.empty((n, n))
        for i, m in enumerate(mus):
            for j, lp in enumerate(lphis):
                s = ParameterState.zeros(spec, mu=m, phi=math.exp(lp))
                # density in log phi carries the Jacobian phi
                vals[i, j] = log_posterior_unnormalized(s, spec, None, tri) + lp
        w = np.exp(vals - 50.0)
        return np.trapezoid(np.trapezoid(w, lphis, axis=1), mus)

    coarse, fine = evidence(81), evidence(161)
    assert abs(coarse / fine - 1) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.integers(1, 5))
def test_base_is_separable(seed, T, D):
    rng = np.random.default_rng(seed)
    spec = ModelSpec("BASE", T, D)
    s = random_state(spec, rng)
    for d in range(D + 1):
        for t in range(T):
            diff = log_mean(s, spec, None, t, d) - log_mean(s, spec, None, 0, d)
            assert diff == pytest.approx(s.alpha[t] - s.alpha[0], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_a_cell_changes_likelihood(seed):
    rng = np.random.default_rng(seed)
    T, D = 6, 2
    spec = ModelSpec("BASE", T, D)
    s = random_state(spec, rng)
    counts = rng.integers(0, 20, size=(T, D + 1))
    mask = censoring_mask(T, D)[:, :, 0]
    t, d = T - 1, 1  # unobserved in the standard geometry
    more = mask.copy()
    more[t, d] = True
    a = log_likelihood(s, spec, None, ReportingTriangle(counts, mask))
    b = log_likelihood(s, spec, None, ReportingTriangle(counts, more))
    term = negbin_logpmf(counts[t, d], math.exp(log_mean(s, spec, None, t, d)), s.phi)
    assert b - a == pytest.approx(term, abs=1e-10)
    assert term == 0 or a != b


def test_variant_formula_mentions_blocks():
    assert "delta_iar" in Variant.M1.formula and "beta_ds" not in Variant.M1.formula
