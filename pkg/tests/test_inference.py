import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from hydrosep import inference as inf
from hydrosep.inference import GibbsConfig, GibbsSample

# (A, B, tau, b, nonneg); A = 0 is a zero dictionary column
CONDITIONAL_CASES = [
    (1.0, 0.5, 2.0, 0.5, True),
    (1.0, 0.5, 2.0, 0.5, False),
    (2.0, -3.0, 4.0, 0.3, False),
    (0.0, 0.0, 1.0, 0.7, False),
    (0.0, 0.0, 1.0, 0.7, True),
    (1.0, 5.0, 10.0, 1.0, True),
    (3.0, 1.0, 0.5, 2.0, False),
]


def grid_cdf(A, B, tau, b, nonneg, n=4096):
    """CDF of the coefficient conditional from its density on an n-point grid."""
    if A > 0:
        sd = 1 / math.sqrt(tau * A)
        centre = B / A
        lo, hi = centre - 1 / (tau * A * b) - 12 * sd, centre + 1 / (tau * A * b) + 12 * sd
        lo, hi = min(lo, -12 * sd), max(hi, 12 * sd)
    else:
        lo, hi = -40 * b, 40 * b
    if nonneg:
        lo = 0.0
    g = np.linspace(lo, hi, n)
    lp = inf.conditional_logpdf(g, A, B, tau, b, nonneg)
    p = np.exp(lp - lp.max())
    c = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(g))))
    c /= c[-1]
    return lambda x: np.interp(x, g, c)


@pytest.mark.parametrize("case", CONDITIONAL_CASES)
def test_coefficient_draws_match_grid_density(case, rng):
    A, B, tau, b, nonneg = case
    draws = inf.draw_coefficient(A, B, tau, b, nonneg, rng, size=50_000)
    ks = stats.kstest(draws, grid_cdf(*case)).statistic
    assert ks < 0.02
    if nonneg:
        assert (draws >= 0).all()


def test_prior_washes_out(rng):
    A, B = 2.0, 3.0
    draws = inf.draw_coefficient(A, B, 1e4, 1e6, False, rng, size=20_000)
    assert abs(draws.mean() - B / A) <= 0.01 * B / A


def test_sample_xj_uses_conditional_terms(rng):
    H = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    y = np.array([2.0, -1.0, 0.5])
    x = np.array([0.0, 0.3])
    A, B = inf.coefficient_terms(0, y, x, H)
    assert (A, B) == (1.0, 2.0)
    vals = [inf.sample_xj(0, y, x, H, 100.0, 1e6, np.random.default_rng(s)) for s in range(400)]
    assert abs(np.mean(vals) - 2.0) < 0.05


def test_tau_posterior_parameters():
    H = np.eye(4)[:, :2]
    x = np.array([1.0, 2.0])
    y = H @ x
    assert inf.tau_posterior(y, x, H, 1.0, 0.7) == (3.0, 0.7)
    y2 = y + np.array([0, 0, 1.0, 1.0])
    assert inf.tau_posterior(y2, x, H, 1.0, 0.7) == (3.0, 1.7)


def test_tau_draw_moments(rng):
    H = rng.random((6, 3))
    x, y = rng.random(3), rng.random(6)
    a_n, b_n = inf.tau_posterior(y, x, H, 1.5, 2.0)
    draws = inf.sample_tau(y, x, H, 1.5, 2.0, rng, size=10_000)
    mean, var = a_n / b_n, a_n / b_n**2
    se_mean = math.sqrt(var / len(draws))
    # standard error of the sample variance for a Gamma: sqrt((m4 - var^2) / n)
    m4 = 3 * a_n * (a_n + 2) / b_n**4
    se_var = math.sqrt((m4 - var**2) / len(draws))
    assert abs(draws.mean() - mean) < 4 * se_mean
    assert abs(draws.var(ddof=1) - var) < 4 * se_var


def test_nan_inputs_rejected(rng):
    with pytest.raises(ValueError):
        inf.sample_tau(np.array([np.nan, 1.0]), np.zeros(1), np.ones((2, 1)), 1, 1, rng)


def chain_cfg(**kw):
    base = dict(T=60, s=20, seed=11)
    base.update(kw)
    return GibbsConfig(**base)


def test_chain_lengths_and_determinism(rng):
    H = rng.random((8, 3))
    H /= np.linalg.norm(H, axis=0)
    y = H @ np.array([1.0, 0.0, 2.0])
    one = inf.gibbs_chain(y, H, 0.5, 1, 1, chain_cfg(T=21, s=20))
    assert len(one) == 1
    a = inf.gibbs_chain(y, H, 0.5, 1, 1, chain_cfg())
    b = inf.gibbs_chain(y, H, 0.5, 1, 1, chain_cfg())
    assert len(a) == 40
    assert all(np.array_equal(s.x, t.x) and s.tau == t.tau for s, t in zip(a, b))
    assert all(s.tau > 0 and (s.x >= 0).all() for s in a)


def test_zero_observation_mean_below_b(rng):
    H = rng.random((10, 4))
    H /= np.linalg.norm(H, axis=0)
    b = 0.5
    X, _ = inf.stack(inf.gibbs_chain(np.zeros(10), H, b, 1, 1, chain_cfg(T=3000, s=200)))
    se = X.std(axis=0) / math.sqrt(len(X)) * 10  # generous for autocorrelation
    assert (X.mean(axis=0) <= b + se).all()


def test_invalid_config():
    with pytest.raises(ValueError):
        GibbsConfig(T=10, s=10)
    with pytest.raises(ValueError):
        GibbsConfig(h_update="other")


def q_oracle(samples, y, H, b, alpha0, beta0):
    total = 0.0
    N, M = H.shape
    for smp in samples:
        rss = sum((y[i] - sum(H[i, j] * smp.x[j] for j in range(M))) ** 2 for i in range(N))
        f1 = N / 2 * math.log(smp.tau / (2 * math.pi)) - smp.tau / 2 * rss
        f2 = sum(math.log(1 / (2 * b)) - abs(smp.x[j]) / b for j in range(M))
        f3 = (alpha0 * math.log(beta0) - math.lgamma(alpha0) + (alpha0 - 1) * math.log(smp.tau)
              - beta0 * smp.tau)
        total += f1 + f2 + f3
    return total / len(samples)


def test_q_hand_case():
    H = np.array([[0.6], [0.8]])
    y = np.array([1.0, 2.0])
    smp = [GibbsSample(np.array([1.5]), 2.0)]
    rss = (1 - 0.9) ** 2 + (2 - 1.2) ** 2
    hand = (math.log(2 / (2 * math.pi)) - rss) + (math.log(1 / 1.0) - 3.0) + (
        2 * math.log(3) - math.lgamma(2) + math.log(2) - 6)
    assert abs(inf.evaluate_Q(smp, y, H, 0.5, 2.0, 3.0) - hand) <= 1e-12


def test_q_prior_term_at_zero():
    H = np.eye(3)
    smp = [GibbsSample(np.zeros(3), 1.0)]
    q = inf.evaluate_Q(smp, np.zeros(3), H, 0.25, 1.0, 1.0)
    f1 = 1.5 * math.log(1 / (2 * math.pi))
    f3 = -1.0
    assert abs(q - f1 - f3 - 3 * math.log(1 / 0.5)) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_q_matches_formula_and_is_average(seed):
    r = np.random.default_rng(seed)
    N, M = r.integers(1, 5), r.integers(1, 4)
    H, y = r.random((N, M)), r.normal(size=N)
    samples = [GibbsSample(r.normal(size=M), r.uniform(0.1, 3)) for _ in range(3)]
    b, a0, b0 = r.uniform(0.1, 2), r.uniform(0.5, 3), r.uniform(0.5, 3)
    q = inf.evaluate_Q(samples, y, H, b, a0, b0)
    assert abs(q - q_oracle(samples, y, H, b, a0, b0)) <= 1e-10 * max(1, abs(q))
    assert abs(inf.evaluate_Q(samples + samples, y, H, b, a0, b0) - q) <= 1e-10 * max(1, abs(q))


def test_streamed_q_matches_samples(rng):
    H = rng.random((6, 3))
    H /= np.linalg.norm(H, axis=0)
    y = H @ np.array([1.0, 0.5, 0.0])
    cfg = chain_cfg()
    stats_ = inf.ChainStats(H, "aggregated", True)
    X, taus = stats_.run(y, np.full(3, 0.4), 1.3, 0.9, cfg, 5, store=cfg.retained)
    samples = [GibbsSample(x, t) for x, t in zip(X, taus)]
    q = stats_.q_value(6, np.full(3, 0.4), 1.3, 0.9, cfg.retained)
    assert abs(q - inf.evaluate_Q(samples, y, H, 0.4, 1.3, 0.9)) <= 1e-9 * abs(q)


@pytest.mark.parametrize("mode", ["aggregated", "paper-literal"])
def test_rank_one_update(mode):
    y = np.array([1.0, 3.0, 0.0, 2.0])
    H = np.array([[0.5], [0.5], [0.5], [0.5]])
    new = inf.mstep_update_H([GibbsSample(np.array([2.0]), 1.0)], y, H, mode=mode)
    assert np.allclose(new[:, 0], y / np.linalg.norm(y), atol=1e-12)


def test_zero_activation_column_unchanged(rng):
    H = rng.random((5, 2))
    H /= np.linalg.norm(H, axis=0)
    samples = [GibbsSample(np.array([1.0, 0.0]), 1.0) for _ in range(3)]
    new = inf.mstep_update_H(samples, rng.random(5), H)
    assert np.array_equal(new[:, 1], H[:, 1])
    assert np.allclose(np.linalg.norm(new, axis=0), 1, atol=1e-9)


def h_update_oracle(X, y, H, mode):
    N, M = H.shape
    new = H.copy()
    for j in range(M):
        sx2 = sum(X[t, j] ** 2 for t in range(len(X)))
        if sx2 < 1e-12:
            continue
        for i in range(N):
            acc = 0.0
            for t in range(len(X)):
                part = y[i] - sum(H[i, k] * X[t, k] for k in range(M) if k != j)
                if mode == "aggregated":
                    acc += X[t, j] * part
                elif X[t, j] != 0:
                    acc += part / X[t, j] ** 2 / len(X)
            new[i, j] = acc / sx2 if mode == "aggregated" else acc
        new[:, j] /= np.linalg.norm(new[:, j])
    return new


@pytest.mark.parametrize("mode", ["aggregated", "paper-literal"])
@given(seed=st.integers(0, 2**32 - 1))
def test_h_update_matches_loop_oracle(mode, seed):
    r = np.random.default_rng(seed)
    N, M, S = r.integers(2, 6), r.integers(1, 4), r.integers(1, 5)
    H = r.random((N, M)) + 0.1
    H /= np.linalg.norm(H, axis=0)
    X = r.uniform(0.5, 2, (S, M))
    y = r.random(N) * 3
    new = inf.mstep_update_H([GibbsSample(x, 1.0) for x in X], y, H, mode)
    want = h_update_oracle(X, y, H, mode)
    assert np.allclose(new, want, atol=1e-10)


def test_single_column_update_is_least_squares(rng):
    # with one column the update is the least-squares direction over samples
    y = rng.random(8)
    X = rng.uniform(0.5, 2, (20, 1))
    H = rng.random((8, 1))
    H /= np.linalg.norm(H)
    new = inf.mstep_update_H([GibbsSample(x, 1.0) for x in X], y, H)

    def sse(h):
        return sum(np.sum((y - h * x) ** 2) for x in X[:, 0])

    ls = (X[:, 0] @ np.tile(y, (20, 1))) / (X[:, 0] @ X[:, 0])
    assert np.allclose(new[:, 0], ls / np.linalg.norm(ls), atol=1e-12)
    assert sse(ls) <= sse(H[:, 0])


@pytest.mark.parametrize("mode", ["aggregated", "paper-literal"])
@pytest.mark.parametrize("support_only", [True, False])
def test_streamed_h_update_matches_samples(mode, support_only, rng):
    H = rng.random((7, 4)) * (rng.random((7, 4)) < 0.6)
    H[0] = 0.3
    H /= np.linalg.norm(H, axis=0)
    y = H @ np.array([1.0, 0.0, 2.0, 0.5]) + 0.05
    cfg = chain_cfg(h_update=mode, support_only=support_only)
    st_ = inf.ChainStats(H, mode, support_only)
    X, taus = st_.run(y, np.full(4, 0.5), 1.0, 1.0, cfg, 9, store=cfg.retained)
    samples = [GibbsSample(x, t) for x, t in zip(X, taus)]
    want = inf.mstep_update_H(samples, y, H, mode, support_only, nonneg=True)
    assert np.allclose(st_.updated_H(True), want, atol=1e-10)


def test_b_update():
    assert inf.mstep_update_b([GibbsSample(np.zeros(3), 1.0)]) == inf.B_MIN
    assert inf.mstep_update_b([GibbsSample(np.array([1.0, -3.0]), 1.0)]) == 2.0


def test_b_update_recovers_laplace_scale(rng):
    x = rng.laplace(0, 0.7, size=(50_000, 2))
    samples = [GibbsSample(row, 1.0) for row in x]
    assert abs(inf.mstep_update_b(samples) - 0.7) <= 0.05 * 0.7


def test_hyperparams_constant_tau():
    c = 2.5
    a, b = inf.update_hyperparams(np.full(50, c), 1.0, 1.0)
    assert abs(special.digamma(a) - (math.log(b) + math.log(c))) <= 1e-8


def test_hyperparams_gamma_samples(rng):
    taus = rng.gamma(3.0, 1 / 2.0, size=100_000)
    a, b = inf.update_hyperparams(taus, 1.0, 1.0)
    assert 2.4 <= a <= 3.6
    assert abs(special.digamma(a) - (math.log(b) + np.mean(np.log(taus)))) <= 1e-8
    assert abs(a / b - taus.mean()) <= 1e-9


def test_hyperparams_single_sample():
    a, b = inf.update_hyperparams([0.3], 1.0, 1.0)
    assert np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0


@given(st.floats(-30, 30))
def test_inverse_digamma(c):
    a, ok = inf.inverse_digamma(c)
    assert ok and abs(special.digamma(a) - c) <= 1e-8 * max(1, abs(c))


def test_hyperparams_nonconvergence_warns(monkeypatch):
    monkeypatch.setattr(inf, "_solve_gamma_shape", lambda kappa: (1.0, False))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert inf.update_hyperparams([1.0, 2.0], 4.0, 5.0) == (4.0, 5.0)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def planted_dictionary():
    N = 24
    H = np.zeros((N, 4))
    for j, (s, v) in enumerate([(2, [1, 2]), (8, [3, 1, 1]), (14, [1]), (18, [2, 2, 1])]):
        H[s:s + len(v), j] = v
    return H / np.linalg.norm(H, axis=0)


def test_single_atom_recovery():
    H = planted_dictionary()
    y = 3.7 * H[:, [1]]
    cfg = GibbsConfig(T=500, s=100, seed=3)
    m = inf.train_device(y, H, cfg)
    X = inf.posterior_mean_coefficients(y, m.H, m.b, m.alpha0, m.beta0, cfg)
    assert inf.reconstruction_error(y, m.H, X) < 0.05


def test_one_em_iteration():
    H = planted_dictionary()
    m = inf.train_device(2.0 * H[:, [0]], H, GibbsConfig(T=40, s=10, em_iters=1))
    assert len(m.q_trace) == 1 and np.isfinite(m.q_trace[0])
    assert np.allclose(np.linalg.norm(m.H, axis=0), 1, atol=1e-9)
    assert m.b > 0 and m.alpha0 > 0 and m.beta0 > 0


def test_training_deterministic():
    H = planted_dictionary()
    Y = H[:, [0, 3]] @ np.array([[1.0, 2.0, 0.0], [0.5, 0.0, 3.0]])
    cfg = GibbsConfig(T=50, s=10, em_iters=3, seed=8)
    a, b = inf.train_device(Y, H, cfg), inf.train_device(Y, H, cfg)
    assert np.array_equal(a.H, b.H) and a.q_trace == b.q_trace and a.b == b.b


def test_training_errors():
    H = planted_dictionary()
    with pytest.raises(ValueError):
        inf.train_device(np.zeros((24, 0)), H, GibbsConfig())
    with pytest.raises(ValueError):
        inf.train_device(np.ones((24, 2)), np.zeros((24, 3)), GibbsConfig())


def test_em_stops_on_tolerance():
    H = planted_dictionary()
    m = inf.train_device(3.0 * H[:, [2]], H, GibbsConfig(T=40, s=10, em_iters=30, em_tol=10.0))
    assert len(m.q_trace) == 2


def test_two_atom_error_trend():
    r = np.random.default_rng(4)
    H = planted_dictionary()
    P = 20
    X = r.uniform(1, 4, (2, P)) * (r.random((2, P)) < 0.8)
    Y = H[:, [0, 3]] @ X
    H0 = np.abs(H[:, [0, 3]] + 0.2 * r.random((24, 2)) * (H[:, [0, 3]] > 0))
    H0 = np.column_stack([H0 / np.linalg.norm(H0, axis=0), H[:, [1, 2]]])
    cfg = GibbsConfig(T=300, s=60, em_iters=10, em_tol=0.0, seed=4)
    errs = []

    def record(it, q, m):
        Xh = inf.posterior_mean_coefficients(Y, m.H, m.b, m.alpha0, m.beta0, cfg)
        errs.append(inf.reconstruction_error(Y, m.H, Xh))

    inf.train_device(Y, H0, cfg, callback=record)
    assert len(errs) == 10
    assert all(b <= 1.05 * a for a, b in zip(errs, errs[1:]))


@given(st.floats(0.0, 5.0), st.floats(-5, 5), st.floats(0.05, 20), st.floats(0.01, 5))
def test_nonneg_draws_nonnegative(A, B, tau, b):
    d = inf.draw_coefficient(A, B, tau, b, True, np.random.default_rng(0), size=50)
    assert (d >= 0).all() and np.isfinite(d).all()
