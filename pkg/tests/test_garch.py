import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from volcast.garch import (
    STATUS_CONVERGED,
    STATUS_OTHER,
    STATUS_SHORT_HISTORY,
    GarchFit,
    _nll_and_grad,
    _pack,
    conditional_variances,
    fit_garch,
    garch_stdev_diagonal,
    gaussian_nll,
    simulate_garch,
)


def recursion_oracle(x, mu, omega, alpha, beta, h0):
    """Plain-loop restatement of the conditional-variance recursion."""
    h = np.empty(len(x))
    e2_prev, h_prev = h0, h0
    for t in range(len(x)):
        h[t] = omega + alpha * e2_prev + beta * h_prev
        e2_prev = (x[t] - mu) ** 2
        h_prev = h[t]
    return h


def test_recursion_matches_plain_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200) * 0.01
    h0 = float(np.var(x, ddof=1))
    fast = conditional_variances(x, 1e-4, 2e-6, 0.07, 0.9, h0=h0)
    slow = recursion_oracle(x, 1e-4, 2e-6, 0.07, 0.9, h0)
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_short_history_falls_back_to_sample_variance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(50) * 0.01
    fit = fit_garch(x)
    assert fit.status == STATUS_SHORT_HISTORY
    assert fit.latest_var == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    assert fit.alpha == 0.0 and fit.beta == 0.0


def test_constant_series_falls_back_with_zero_variance():
    fit = fit_garch(np.full(300, 0.004))
    assert fit.status == STATUS_OTHER
    assert fit.latest_var == 0.0


def test_empty_series_gives_zero_stdev():
    stdevs, fits = garch_stdev_diagonal(np.full((1, 120), np.nan))
    assert stdevs[0] == 0.0
    assert fits[0].status == STATUS_SHORT_HISTORY


def test_simulate_and_refit_recovers_persistence():
    errs = []
    for seed in range(5):
        x = simulate_garch(750, 1e-6, 0.08, 0.90, rng=np.random.default_rng(seed))
        fit = fit_garch(x)
        assert fit.status == STATUS_CONVERGED
        assert fit.omega > 0 and fit.alpha >= 0 and fit.beta >= 0
        assert fit.alpha + fit.beta < 1
        errs.append(abs(fit.alpha + fit.beta - 0.98))
    assert np.mean(errs) <= 0.06


def test_iid_gaussian_latest_var_near_truth():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal(1500) * 0.01
        fit = fit_garch(x)
        if abs(fit.latest_var - 1e-4) <= 0.25e-4:
            hits += 1
    assert hits >= 8


def test_loglik_beats_naive_point_for_converged_fits():
    for seed in range(5):
        x = simulate_garch(500, 5e-7, 0.1, 0.85, rng=np.random.default_rng(seed))
        fit = fit_garch(x)
        assert fit.converged
        naive_nll = gaussian_nll(
            x, float(np.mean(x)), float(np.var(x)), 0.0, 0.0, h0=float(np.var(x, ddof=1))
        )
        assert -fit.loglik <= naive_nll + 1e-9


def test_latest_var_reproducible_from_parameters():
    x = simulate_garch(400, 1e-6, 0.08, 0.9, rng=np.random.default_rng(3))
    fit = fit_garch(x)
    h = recursion_oracle(x, fit.mu, fit.omega, fit.alpha, fit.beta, float(np.var(x, ddof=1)))
    assert fit.latest_var == pytest.approx(h[-1], abs=1e-10)


def test_omega_mle_with_alpha_beta_zero_is_population_variance():
    # closed-form oracle: holding alpha = beta = 0, the likelihood in omega
    # is minimized at the population variance of the demeaned series
    rng = np.random.default_rng(4)
    x = rng.standard_normal(400) * 0.02
    mu = float(np.mean(x))
    h0 = float(np.var(x, ddof=1))
    pvar = float(np.var(x, ddof=0))
    res = minimize_scalar(
        lambda w: gaussian_nll(x, mu, w, 0.0, 0.0, h0=h0),
        bounds=(pvar / 10, pvar * 10),
        method="bounded",
        options={"xatol": 1e-14},
    )
    assert res.x == pytest.approx(pvar, rel=1e-6)


def test_analytic_gradient_matches_finite_differences():
    x = simulate_garch(300, 2e-6, 0.1, 0.85, mu=1e-4, rng=np.random.default_rng(5))
    svar = float(np.var(x, ddof=1))
    theta = _pack(2e-4, svar * 0.2, 0.07, 0.88)
    _, grad = _nll_and_grad(theta, x, svar)
    eps = 1e-6
    for i in range(4):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        approx = (_nll_and_grad(tp, x, svar)[0] - _nll_and_grad(tm, x, svar)[0]) / (2 * eps)
        assert grad[i] == pytest.approx(approx, rel=1e-5, abs=1e-8)


def test_all_fallback_diagonal_equals_naive_window_stdevs():
    rng = np.random.default_rng(6)
    values = rng.standard_normal((3, 60)) * 0.01  # too short for GARCH
    stdevs, fits = garch_stdev_diagonal(values)
    for i, fit in enumerate(fits):
        assert fit.status == STATUS_SHORT_HISTORY
        assert stdevs[i] == pytest.approx(np.std(values[i], ddof=1), rel=1e-12)


def test_simulate_garch_validates_stationarity():
    with pytest.raises(ValueError):
        simulate_garch(100, 1e-6, 0.5, 0.6)


def test_fit_ignores_non_finite_entries():
    x = simulate_garch(400, 1e-6, 0.08, 0.9, rng=np.random.default_rng(7))
    with_gaps = np.insert(x, [10, 50, 200], np.nan)
    fit_full = fit_garch(x)
    fit_gaps = fit_garch(with_gaps)
    assert fit_gaps.n_obs == fit_full.n_obs
    assert fit_gaps.latest_var == pytest.approx(fit_full.latest_var, rel=1e-12)
