"""Noise schedule: closed-form checks, a Monte Carlo step-composition oracle,
algebraic inversion, and a known-target sampling oracle."""

import numpy as np
import pytest

from diffdrive.errors import ConfigError, DimensionError, UsageError
from diffdrive.schedule import make_schedule

BOUNDS = (1e-4, 0.02)


def cosine_alpha_bar_oracle(T, beta_start, beta_end):
    """Straight transcription of the squared-cosine definition with clipping,
    written independently of the implementation."""
    s = 0.008
    f = [np.cos(((t / T + s) / (1 + s)) * np.pi / 2) ** 2 for t in range(T + 1)]
    abar = 1.0
    out = [abar]
    for t in range(1, T + 1):
        beta_t = 1 - (f[t] / f[0]) / (f[t - 1] / f[0])
        beta_t = min(max(beta_t, beta_start), beta_end)
        abar *= 1 - beta_t
        out.append(abar)
    return np.array(out)


def test_invariants_both_kinds_many_horizons():
    for kind in ("squared_cosine", "linear"):
        for T in (1, 2, 3, 5, 10, 50, 100, 500, 1000):
            sch = make_schedule(kind, T, *BOUNDS)
            assert sch.alpha_bar[0] == 1.0
            assert sch.beta.shape == (T + 1,)
            np.testing.assert_allclose(sch.alpha[1:], 1.0 - sch.beta[1:], rtol=1e-15)
            np.testing.assert_allclose(sch.alpha_bar, np.cumprod(sch.alpha), rtol=1e-15)
            assert (np.diff(sch.alpha_bar) < 0).all()
            assert 0.0 < sch.alpha_bar[T] < 1.0
            assert (sch.beta[1:] >= BOUNDS[0] - 1e-15).all()
            assert (sch.beta[1:] <= BOUNDS[1] + 1e-15).all()
            # signal-to-noise ratio strictly decreasing
            snr = sch.alpha_bar[1:] / (1.0 - sch.alpha_bar[1:])
            assert (np.diff(snr) < 0).all()


def test_linear_single_step():
    sch = make_schedule("linear", 1, *BOUNDS)
    assert sch.beta[1] == BOUNDS[0]
    np.testing.assert_allclose(sch.alpha_bar[1], 1.0 - BOUNDS[0])


def test_cosine_matches_independent_transcription():
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    oracle = cosine_alpha_bar_oracle(100, *BOUNDS)
    np.testing.assert_allclose(sch.alpha_bar, oracle, rtol=1e-12)
    # spot value called out separately
    np.testing.assert_allclose(sch.alpha_bar[50], oracle[50], rtol=1e-12)


def test_constructor_validation():
    with pytest.raises(ConfigError):
        make_schedule("quadratic", 10)
    with pytest.raises(ConfigError):
        make_schedule("linear", 0)
    with pytest.raises(ConfigError):
        make_schedule("linear", 10, 0.02, 0.01)
    with pytest.raises(ConfigError):
        make_schedule("linear", 10, 0.0, 0.01)


def test_forward_diffuse_limits_and_linearity():
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    rng = np.random.default_rng(0)
    a0 = rng.standard_normal((4, 8, 2))
    eps = rng.standard_normal((4, 8, 2))
    t = 37
    np.testing.assert_array_equal(
        sch.forward_diffuse(a0, t, np.zeros_like(a0)),
        np.sqrt(sch.alpha_bar[t]) * a0)
    np.testing.assert_array_equal(
        sch.forward_diffuse(np.zeros_like(a0), t, eps),
        np.sqrt(1.0 - sch.alpha_bar[t]) * eps)
    lam = 1.7
    np.testing.assert_allclose(
        sch.forward_diffuse(lam * a0, t, lam * eps),
        lam * sch.forward_diffuse(a0, t, eps), rtol=1e-14)


def test_forward_diffuse_vector_t():
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    rng = np.random.default_rng(1)
    a0 = rng.standard_normal((3, 5, 2))
    eps = rng.standard_normal((3, 5, 2))
    ts = np.array([1, 50, 100])
    out = sch.forward_diffuse(a0, ts, eps)
    for b, t in enumerate(ts):
        np.testing.assert_array_equal(out[b], sch.forward_diffuse(a0[b], int(t), eps[b]))


def test_forward_diffuse_contract_errors():
    sch = make_schedule("linear", 10, *BOUNDS)
    a = np.zeros((2, 2))
    with pytest.raises(UsageError):
        sch.forward_diffuse(a, 0, a)
    with pytest.raises(UsageError):
        sch.forward_diffuse(a, 11, a)
    with pytest.raises(DimensionError):
        sch.forward_diffuse(a, 1, np.zeros((2, 3)))


def test_marginal_matches_step_composition_monte_carlo():
    # Compose the single-step corruption t times over many chains; the closed
    # form must reproduce the empirical mean and variance within 3 SE.
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    rng = np.random.default_rng(2)
    n = 10_000
    a0_val = 0.7
    for t in (1, 10, 50, 100):
        x = np.full(n, a0_val)
        for step in range(1, t + 1):
            b = sch.beta[step]
            x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(n)
        want_mean = np.sqrt(sch.alpha_bar[t]) * a0_val
        want_var = 1.0 - sch.alpha_bar[t]
        se_mean = np.sqrt(want_var / n)
        se_var = want_var * np.sqrt(2.0 / (n - 1))
        assert abs(x.mean() - want_mean) < 3 * se_mean, f"mean off at t={t}"
        assert abs(x.var(ddof=1) - want_var) < 3 * se_var, f"var off at t={t}"


def test_reverse_step_inverts_forward_at_t1():
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    rng = np.random.default_rng(3)
    a0 = rng.uniform(-1, 1, (8, 2))
    eps = rng.standard_normal((8, 2))
    a1 = sch.forward_diffuse(a0, 1, eps)
    rec = sch.reverse_step(a1, eps, 1, eta=0.0)
    assert np.abs(rec - a0).max() < 1e-9


def test_reverse_step_posterior_mean_formula():
    sch = make_schedule("linear", 50, *BOUNDS)
    rng = np.random.default_rng(4)
    at = rng.standard_normal((4, 2))
    eps_hat = rng.standard_normal((4, 2))
    for t in (1, 25, 50):
        alpha_t = sch.alpha[t]
        abar_t = sch.alpha_bar[t]
        want = (at - ((1 - alpha_t) / np.sqrt(1 - abar_t)) * eps_hat) / np.sqrt(alpha_t)
        np.testing.assert_array_equal(sch.reverse_step(at, eps_hat, t, eta=0.0), want)


def test_reverse_step_deterministic_at_eta0_and_sigma_zero_at_t1():
    sch = make_schedule("squared_cosine", 100, *BOUNDS)
    rng = np.random.default_rng(5)
    at = rng.standard_normal((3, 2))
    eps_hat = rng.standard_normal((3, 2))
    r1 = sch.reverse_step(at, eps_hat, 40, eta=0.0)
    r2 = sch.reverse_step(at, eps_hat, 40, eta=0.0)
    assert r1.tobytes() == r2.tobytes()
    # eta=1 at t=1: the sigma factor vanishes because alpha_bar[0] = 1
    z = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(
        sch.reverse_step(at, eps_hat, 1, eta=1.0, z=z),
        sch.reverse_step(at, eps_hat, 1, eta=0.0))
    # eta=1 elsewhere does inject noise
    with_z = sch.reverse_step(at, eps_hat, 40, eta=1.0, z=z)
    assert np.abs(with_z - r1).max() > 1e-6


def test_full_chain_recovers_known_gaussian_target():
    # Per-step optimal noise predictor for a Gaussian target, obtained by
    # ordinary least squares on simulated pairs (that is the training), then
    # run the full T-step sampler and check the sample mean.
    T = 100
    sch = make_schedule("squared_cosine", T, *BOUNDS)
    rng = np.random.default_rng(6)
    m, sd = 3.0, 0.1
    n_fit = 4000
    coef = np.zeros((T + 1, 2))  # eps_hat = w*a_t + b per step
    for t in range(1, T + 1):
        a0 = rng.normal(m, sd, n_fit)
        eps = rng.standard_normal(n_fit)
        at = sch.forward_diffuse(a0, t, eps)
        A = np.stack([at, np.ones(n_fit)], axis=1)
        coef[t], *_ = np.linalg.lstsq(A, eps, rcond=None)

    n_samp = 1000
    x = rng.standard_normal(n_samp)
    for t in range(T, 0, -1):
        eps_hat = coef[t, 0] * x + coef[t, 1]
        z = rng.standard_normal(n_samp) if t > 1 else None
        x = sch.reverse_step(x, eps_hat, t, eta=1.0, z=z)
    assert abs(x.mean() - m) < 0.1
