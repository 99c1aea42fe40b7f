"""The four portfolio-volatility estimation schemes.

Every scheme forecasts sqrt(w' Sigma w) with a different Sigma estimate:

* direct approach: Sigma over the portfolio companies' returns,
* factor approach: loadings' Sigma_f loadings over the factor returns plus
  a diagonal of residual variances,

each with the correlation structure from a naive q-month window and the
standard deviations from either the same window (naive) or per-series
GARCH(1,1) fits over a 3-year history (garch). Correlation matrices that
come out indefinite (a pairwise-estimation artifact) are PD-repaired before
use, so the quadratic form is non-negative up to roundoff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .calendars import month_add
from .covariance import CovEstimate, decompose, pairwise_covariance, repair_correlation
from .factors import FactorReturns, residual_variances
from .garch import GarchFit, garch_stdev_diagonal
from .panels import LoadingPanel, ResidualPanel, ReturnPanel
from .portfolios import Portfolio

log = logging.getLogger(__name__)

APPROACH_DIRECT = "direct"
APPROACH_FACTOR = "factor"
MODEL_NAIVE = "naive"
MODEL_GARCH = "garch"


class EstimationError(RuntimeError):
    """Internal consistency failure (negative variance after repair)."""


@dataclass(frozen=True)
class SchemeId:
    """One of the estimation schemes: approach x variance model x window."""

    approach: str
    variance_model: str
    q: int

    def __post_init__(self):
        if self.approach not in (APPROACH_DIRECT, APPROACH_FACTOR):
            raise ValueError(f"unknown approach {self.approach!r}")
        if self.variance_model not in (MODEL_NAIVE, MODEL_GARCH):
            raise ValueError(f"unknown variance model {self.variance_model!r}")
        if self.q < 1:
            raise ValueError("window length q must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.approach}_{self.variance_model}_q{self.q}"


def scheme_covariance(
    window_values: np.ndarray, garch_stdevs: np.ndarray | None = None
) -> CovEstimate:
    """Sigma = D R D from a window of row series.

    R is the pairwise correlation over the window (PD-repaired if needed);
    D holds the window stdevs, or the GARCH stdevs when given. Series that
    are non-estimable in the window keep a zero correlation row and hence
    contribute zero variance regardless of D.
    """
    cov, counts = pairwise_covariance(window_values)
    stdevs, corr = decompose(cov)
    corr, repaired = repair_correlation(corr)
    d = stdevs if garch_stdevs is None else np.asarray(garch_stdevs, dtype=float)
    sigma = corr * np.outer(d, d)
    return CovEstimate(cov=sigma, corr=corr, stdevs=d, estimable=counts >= 2, repaired=repaired)


def quadratic_form_vol(weights: np.ndarray, cov: np.ndarray) -> float:
    """sqrt(w' Sigma w), clamping the roundoff-level negatives a repaired
    correlation (min eigenvalue >= -1e-8) can still produce."""
    v = float(weights @ cov @ weights)
    if v < 0:
        scale = float(np.max(np.abs(cov))) if cov.size else 0.0
        if v > -1e-7 * max(scale, 1e-300):
            return 0.0
        raise EstimationError(f"negative portfolio variance {v!r} after PD repair")
    return float(np.sqrt(v))


def portfolio_loading_vector(
    portfolio: Portfolio, loadings: LoadingPanel
) -> np.ndarray:
    """L_P = L w from the last pre-period month's loadings.

    Missing loadings of member companies aggregate as zero exposure.
    """
    month = month_add(portfolio.period_start, -1)
    mat = loadings.month_matrix(month)[loadings.rows(portfolio.companies)]
    return np.nan_to_num(mat, nan=0.0).T @ portfolio.weights


def estimate_direct(
    portfolio: Portfolio,
    returns: ReturnPanel,
    scheme: SchemeId,
    garch_history_months: int = 36,
    garch_min_obs: int = 100,
) -> float:
    """Direct-return scheme estimate for one portfolio."""
    if scheme.approach != APPROACH_DIRECT:
        raise ValueError(f"scheme {scheme.label} is not a direct scheme")
    end_month = month_add(portfolio.period_start, -1)
    rows = returns.rows(portfolio.companies)
    window = returns.window(end_month, scheme.q).values[rows]
    gstd = None
    if scheme.variance_model == MODEL_GARCH:
        history = returns.window(end_month, garch_history_months).values[rows]
        gstd, _ = garch_stdev_diagonal(history, min_obs=garch_min_obs)
    est = scheme_covariance(window, garch_stdevs=gstd)
    return quadratic_form_vol(portfolio.weights, est.cov)


def estimate_factor(
    portfolio: Portfolio,
    factor_returns: FactorReturns,
    residuals: ResidualPanel,
    loadings: LoadingPanel,
    scheme: SchemeId,
    garch_history_months: int = 36,
    garch_min_obs: int = 100,
) -> float:
    """Factor-model scheme estimate for one portfolio."""
    if scheme.approach != APPROACH_FACTOR:
        raise ValueError(f"scheme {scheme.label} is not a factor scheme")
    end_month = month_add(portfolio.period_start, -1)
    window = factor_returns.window_values(end_month, scheme.q)
    gstd = None
    if scheme.variance_model == MODEL_GARCH:
        history = factor_returns.window_values(end_month, garch_history_months)
        gstd, _ = garch_stdev_diagonal(history, min_obs=garch_min_obs)
    sigma_f = scheme_covariance(window, garch_stdevs=gstd)
    lp = portfolio_loading_vector(portfolio, loadings)
    factor_var = float(lp @ sigma_f.cov @ lp)
    resid = residual_variances(residuals, end_month, scheme.q)
    rows = residuals.rows(portfolio.companies)
    resid_var = float(np.sum(np.square(portfolio.weights) * resid[rows]))
    v = factor_var + resid_var
    if v < 0:
        if v > -1e-12 * max(1.0, float(np.max(np.abs(sigma_f.cov)))):
            return 0.0
        raise EstimationError(f"negative portfolio variance {v!r} after PD repair")
    return float(np.sqrt(v))


class VolatilityEstimator:
    """Scheme estimator with per-period caches shared across portfolios.

    The pairwise correlation structure, naive stdevs, residual variances
    and GARCH fits depend only on the period (and window length), not the
    portfolio. In particular the direct-approach correlation matrix is
    estimated and PD-repaired once over the whole company universe per
    (period, q); each portfolio then uses its principal submatrix, which
    inherits positive semidefiniteness and keeps a single consistent
    repaired correlation structure across overlapping portfolios.
    """

    def __init__(
        self,
        returns: ReturnPanel,
        loadings: LoadingPanel,
        factor_returns: FactorReturns,
        residuals: ResidualPanel,
        garch_history_months: int = 36,
        garch_min_obs: int = 100,
    ):
        self.returns = returns
        self.loadings = loadings
        self.factor_returns = factor_returns
        self.residuals = residuals
        self.garch_history_months = garch_history_months
        self.garch_min_obs = garch_min_obs
        self._window_mask: dict[tuple[str, int], np.ndarray] = {}
        self._direct_universe: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._factor_cov: dict[tuple, CovEstimate] = {}
        self._factor_gstd: dict[str, np.ndarray] = {}
        self._resid_var: dict[tuple, np.ndarray] = {}
        self._company_garch: dict[tuple[str, str], GarchFit] = {}
        self._factor_garch: dict[str, list[GarchFit]] = {}

    def estimate(self, portfolio: Portfolio, scheme: SchemeId) -> float:
        if scheme.approach == APPROACH_DIRECT:
            return self._estimate_direct(portfolio, scheme)
        return self._estimate_factor(portfolio, scheme)

    def _window_values(self, end_month: str, q: int, rows: np.ndarray | None = None) -> np.ndarray:
        key = (end_month, q)
        mask = self._window_mask.get(key)
        if mask is None:
            mask = self.returns.calendar.window_day_mask(end_month, q)
            self._window_mask[key] = mask
        values = self.returns.values if rows is None else self.returns.values[rows]
        return values[:, mask]

    # -- direct ---------------------------------------------------------

    def _company_garch_stdevs(self, period_start: str, companies) -> np.ndarray:
        end_month = month_add(period_start, -1)
        missing = [c for c in companies if (period_start, c) not in self._company_garch]
        if missing:
            history = self._window_values(
                end_month, self.garch_history_months, self.returns.rows(missing)
            )
            _, fits = garch_stdev_diagonal(history, min_obs=self.garch_min_obs)
            for c, f in zip(missing, fits):
                self._company_garch[(period_start, c)] = f
        return np.array(
            [
                np.sqrt(max(self._company_garch[(period_start, c)].latest_var, 0.0))
                for c in companies
            ]
        )

    def _universe_correlation(self, period_start: str, q: int) -> tuple[np.ndarray, np.ndarray]:
        key = (period_start, q)
        cached = self._direct_universe.get(key)
        if cached is None:
            end_month = month_add(period_start, -1)
            window = self._window_values(end_month, q)
            cov, _ = pairwise_covariance(window)
            stdevs, corr = decompose(cov)
            corr, _ = repair_correlation(corr)
            cached = (corr, stdevs)
            self._direct_universe[key] = cached
        return cached

    def _estimate_direct(self, portfolio: Portfolio, scheme: SchemeId) -> float:
        corr, stdevs = self._universe_correlation(portfolio.period_start, scheme.q)
        rows = self.returns.rows(portfolio.companies)
        sub = corr[np.ix_(rows, rows)]
        if scheme.variance_model == MODEL_GARCH:
            d = self._company_garch_stdevs(portfolio.period_start, portfolio.companies)
        else:
            d = stdevs[rows]
        return quadratic_form_vol(portfolio.weights, sub * np.outer(d, d))

    # -- factor ---------------------------------------------------------

    def _factor_covariance(self, period_start: str, scheme: SchemeId) -> CovEstimate:
        if self.factor_returns is None:
            raise ValueError("factor schemes need a fitted factor model")
        key = (period_start, scheme.q, scheme.variance_model)
        if key not in self._factor_cov:
            end_month = month_add(period_start, -1)
            window = self.factor_returns.window_values(end_month, scheme.q)
            gstd = None
            if scheme.variance_model == MODEL_GARCH:
                if period_start not in self._factor_gstd:
                    history = self.factor_returns.window_values(
                        end_month, self.garch_history_months
                    )
                    stdevs, fits = garch_stdev_diagonal(history, min_obs=self.garch_min_obs)
                    self._factor_gstd[period_start] = stdevs
                    self._factor_garch[period_start] = fits
                gstd = self._factor_gstd[period_start]
            self._factor_cov[key] = scheme_covariance(window, garch_stdevs=gstd)
        return self._factor_cov[key]

    def _residual_variances(self, period_start: str, q: int) -> np.ndarray:
        key = (period_start, q)
        if key not in self._resid_var:
            self._resid_var[key] = residual_variances(
                self.residuals, month_add(period_start, -1), q
            )
        return self._resid_var[key]

    def _estimate_factor(self, portfolio: Portfolio, scheme: SchemeId) -> float:
        sigma_f = self._factor_covariance(portfolio.period_start, scheme)
        lp = portfolio_loading_vector(portfolio, self.loadings)
        resid = self._residual_variances(portfolio.period_start, scheme.q)
        rows = self.residuals.rows(portfolio.companies)
        v = float(lp @ sigma_f.cov @ lp) + float(
            np.sum(np.square(portfolio.weights) * resid[rows])
        )
        if v < 0:
            if v > -1e-12 * max(1.0, float(np.max(np.abs(sigma_f.cov)))):
                return 0.0
            raise EstimationError(f"negative portfolio variance {v!r} after PD repair")
        return float(np.sqrt(v))

    # -- diagnostics ----------------------------------------------------

    def garch_diagnostics(self) -> list[tuple[str, str, GarchFit]]:
        """(series, period, fit) rows for every GARCH fit performed."""
        rows = [
            (company, period, fit)
            for (period, company), fit in self._company_garch.items()
        ]
        for period, fits in self._factor_garch.items():
            rows.extend(
                (name, period, fit)
                for name, fit in zip(self.factor_returns.factor_names, fits)
            )
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows
