"""Constant-mean GARCH(1,1) quasi-maximum-likelihood fitting.

The model per series is

    r_t = mu + e_t,    e_t | F_{t-1} ~ N(0, h_t),
    h_t = omega + alpha * e_{t-1}^2 + beta * h_{t-1},

with the recursion initialized at the sample variance of the window. The
Gaussian likelihood is maximized by quasi-Newton steps on transformed
parameters (log omega; a logistic map keeping alpha, beta >= 0 and
alpha + beta <= 0.999), so every iterate is stationary by construction.
Any failure (short history, non-convergence, degenerate input) falls back
to the naive sample variance of the same window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

log = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_SHORT_HISTORY = "fallback_short_history"
STATUS_NONCONVERGENCE = "fallback_nonconvergence"
STATUS_OTHER = "fallback_other"

PERSISTENCE_CAP = 0.999
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GarchFit:
    """Fitted GARCH(1,1) parameters and the last in-sample conditional variance."""

    mu: float
    omega: float
    alpha: float
    beta: float
    latest_var: float
    status: str
    n_obs: int
    loglik: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def conditional_variances(
    series: np.ndarray, mu: float, omega: float, alpha: float, beta: float, h0: float | None = None
) -> np.ndarray:
    """Conditional-variance path h_t under the recursion.

    The pre-sample state (both e_0^2 and h_0) is backcast at ``h0``, which
    defaults to the sample variance of the window, so every observation
    contributes a likelihood term and alpha = beta = 0 gives h_t = omega
    for all t.
    """
    x = np.asarray(series, dtype=float)
    if len(x) == 0:
        return np.empty(0)
    if h0 is None:
        h0 = float(np.var(x, ddof=1)) if len(x) > 1 else 0.0
    e2 = np.square(x - mu)
    # h[t] = (omega + alpha * e2[t-1]) + beta * h[t-1] is a first-order IIR
    # filter, which lfilter evaluates in C.
    u = omega + alpha * np.concatenate(([h0], e2[:-1]))
    h, _ = lfilter([1.0], [1.0, -beta], u, zi=np.array([beta * h0]))
    return h


def gaussian_nll(
    series: np.ndarray, mu: float, omega: float, alpha: float, beta: float, h0: float | None = None
) -> float:
    """Negative Gaussian log-likelihood of the series under the recursion."""
    x = np.asarray(series, dtype=float)
    h = conditional_variances(x, mu, omega, alpha, beta, h0=h0)
    if len(h) == 0:
        return 0.0
    e2 = np.square(x - mu)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 0.5 * (len(x) * LOG2PI + float(np.sum(np.log(h))) + float(np.sum(e2 / h)))
    return out if np.isfinite(out) else float("inf")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _unpack(theta: np.ndarray) -> tuple[float, float, float, float]:
    mu = float(theta[0])
    omega = math.exp(min(max(float(theta[1]), -100.0), 100.0))
    persistence = PERSISTENCE_CAP * _sigmoid(float(theta[2]))
    share = _sigmoid(float(theta[3]))
    return mu, omega, share * persistence, (1.0 - share) * persistence


def _pack(mu: float, omega: float, alpha: float, beta: float) -> np.ndarray:
    persistence = alpha + beta
    share = alpha / persistence
    return np.array(
        [mu, math.log(omega), _logit(persistence / PERSISTENCE_CAP), _logit(share)]
    )


def _nll_and_grad(theta: np.ndarray, x: np.ndarray, backcast: float) -> tuple[float, np.ndarray]:
    """Objective and analytic gradient on the transformed parameters.

    The derivative of h_t w.r.t. each raw parameter follows the same
    first-order recursion as h_t itself, so everything is a handful of
    lfilter passes sharing the denominator [1, -beta].
    """
    mu, omega, alpha, beta = _unpack(theta)
    n = len(x)
    e = x - mu
    e2 = e * e

    lagged_e2 = np.empty(n)
    lagged_e2[0] = backcast
    lagged_e2[1:] = e2[:-1]
    lagged_e = np.empty(n)
    lagged_e[0] = 0.0
    lagged_e[1:] = e[:-1]

    # pass 1: h plus the omega/alpha/mu derivative recursions
    inputs = np.empty((n, 4))
    inputs[:, 0] = omega + alpha * lagged_e2
    inputs[:, 1] = 1.0
    inputs[:, 2] = lagged_e2
    inputs[:, 3] = -2.0 * alpha * lagged_e
    zi = np.array([[beta * backcast, 0.0, 0.0, 0.0]])
    out, _ = lfilter([1.0], [1.0, -beta], inputs, axis=0, zi=zi)
    h, dh_om, dh_al, dh_mu = out.T

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        inv_h = 1.0 / h
        nll = 0.5 * (n * LOG2PI + float(np.sum(np.log(h))) + float(np.sum(e2 * inv_h)))
    if not np.isfinite(nll):
        return float("inf"), np.zeros(4)

    # pass 2: the beta derivative needs the fitted h path as input
    lagged_h = np.empty(n)
    lagged_h[0] = backcast
    lagged_h[1:] = h[:-1]
    dh_be, _ = lfilter([1.0], [1.0, -beta], lagged_h, zi=np.array([0.0]))

    g_h = 0.5 * inv_h * (1.0 - e2 * inv_h)
    d_om = float(g_h @ dh_om)
    d_al = float(g_h @ dh_al)
    d_be = float(g_h @ dh_be)
    d_mu = float(g_h @ dh_mu) - float(np.sum(e * inv_h))

    sig_a = _sigmoid(float(theta[2]))
    share = _sigmoid(float(theta[3]))
    persistence = PERSISTENCE_CAP * sig_a
    grad = np.array(
        [
            d_mu,
            d_om * omega,
            (d_al * share + d_be * (1.0 - share)) * persistence * (1.0 - sig_a),
            (d_al - d_be) * persistence * share * (1.0 - share),
        ]
    )
    if not np.all(np.isfinite(grad)):
        return float("inf"), np.zeros(4)
    return nll, grad


def _fallback(x: np.ndarray, status: str) -> GarchFit:
    n = len(x)
    mean = float(np.mean(x)) if n else 0.0
    var = float(np.var(x, ddof=1)) if n > 1 else 0.0
    return GarchFit(
        mu=mean, omega=var, alpha=0.0, beta=0.0, latest_var=var, status=status, n_obs=n
    )


def fit_garch(
    series: np.ndarray,
    min_obs: int = 100,
    max_iter: int = 500,
    grad_tol: float = 1e-6,
) -> GarchFit:
    """Fit GARCH(1,1) by Gaussian QML, with the naive-variance fallback ladder.

    Never raises: fewer than ``min_obs`` observations, optimizer failure or
    a degenerate likelihood all return a fallback fit whose ``latest_var``
    is the plain sample variance of the window.
    """
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    n = len(x)
    if n < min_obs:
        return _fallback(x, STATUS_SHORT_HISTORY)
    svar = float(np.var(x, ddof=1))
    if not np.isfinite(svar) or svar <= 0.0:
        return _fallback(x, STATUS_OTHER)

    mean = float(np.mean(x))
    best = None
    # starts are tried in order; the first successful one is kept
    for alpha0, beta0 in ((0.05, 0.90), (0.10, 0.80), (0.02, 0.96)):
        theta0 = _pack(mean, svar * (1.0 - alpha0 - beta0), alpha0, beta0)
        try:
            res = minimize(
                _nll_and_grad,
                theta0,
                args=(x, svar),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": max_iter, "gtol": grad_tol},
            )
        except (ValueError, FloatingPointError):  # pathological line search
            continue
        if res.success and np.isfinite(res.fun):
            best = res
            break
    if best is None:
        return _fallback(x, STATUS_NONCONVERGENCE)

    mu, omega, alpha, beta = _unpack(best.x)
    nll = float(best.fun)

    # The alpha = beta = 0 boundary (plain sample variance) is a feasible
    # model the transform can only approach; keep it when it wins outright.
    pvar = float(np.var(x, ddof=0))
    nll_naive = gaussian_nll(x, mean, pvar, 0.0, 0.0, h0=svar)
    if nll_naive < nll:
        mu, omega, alpha, beta, nll = mean, pvar, 0.0, 0.0, nll_naive

    h = conditional_variances(x, mu, omega, alpha, beta, h0=svar)
    latest = float(h[-1])
    if not np.isfinite(latest) or latest <= 0.0:
        return _fallback(x, STATUS_OTHER)
    return GarchFit(
        mu=mu,
        omega=omega,
        alpha=alpha,
        beta=beta,
        latest_var=latest,
        status=STATUS_CONVERGED,
        n_obs=n,
        loglik=-nll,
    )


def garch_stdev_diagonal(
    values: np.ndarray, min_obs: int = 100
) -> tuple[np.ndarray, list[GarchFit]]:
    """Per-row GARCH stdevs for a series x days window, with fit diagnostics.

    Missing days inside each row are dropped and the series concatenated.
    Rows that fall back carry the naive window stdev; empty rows get 0.
    """
    values = np.asarray(values, dtype=float)
    fits = [fit_garch(row[np.isfinite(row)], min_obs=min_obs) for row in values]
    stdevs = np.array([np.sqrt(max(f.latest_var, 0.0)) for f in fits])
    return stdevs, fits


def simulate_garch(
    n: int,
    omega: float,
    alpha: float,
    beta: float,
    mu: float = 0.0,
    rng: np.random.Generator | None = None,
    burn: int = 250,
    return_variance: bool = False,
):
    """Simulate a GARCH(1,1) path, discarding ``burn`` warm-up steps.

    With ``return_variance`` also returns the true conditional-variance
    path alongside the returns.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not (omega > 0 and alpha >= 0 and beta >= 0 and alpha + beta < 1):
        raise ValueError("parameters must satisfy the stationarity constraints")
    total = n + burn
    z = rng.standard_normal(total)
    h = omega / (1.0 - alpha - beta)
    out = np.empty(total)
    hs = np.empty(total)
    for t in range(total):
        hs[t] = h
        e = np.sqrt(h) * z[t]
        out[t] = mu + e
        h = omega + alpha * e * e + beta * h
    if return_variance:
        return out[burn:], hs[burn:]
    return out[burn:]
