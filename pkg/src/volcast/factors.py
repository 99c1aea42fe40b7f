"""Daily cross-sectional factor regressions.

Each trading day, company returns are regressed on that month's loadings by
constrained weighted least squares with market caps as weights. The default
constraints remove the collinearity between the market intercept and the
one-hot country/industry blocks: the cap-weighted factor returns of each
block sum to zero. Days that cannot be fitted get factor returns of 0 and
missing residuals.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .calendars import TradingCalendar
from .panels import (
    KIND_COUNTRY,
    KIND_INDUSTRY,
    LoadingPanel,
    MarketCapSeries,
    ResidualPanel,
    ReturnPanel,
    UniverseMask,
    window_slice,
)

log = logging.getLogger(__name__)


class SingularFitError(ValueError):
    """The cross-sectional design is rank deficient after constraints."""


@dataclass(frozen=True)
class FitConfig:
    """Per-day regression settings."""

    weighting: str = "mc"  # or "sqrt_mc"
    constrain_countries: bool = True
    constrain_industries: bool = True

    def weights(self, caps: np.ndarray) -> np.ndarray:
        if self.weighting == "mc":
            return caps
        if self.weighting == "sqrt_mc":
            return np.sqrt(caps)
        raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True, eq=False)
class FactorReturns:
    """Factors x days matrix of fitted daily factor returns.

    Unfittable days hold 0 (the zero-fill rule) and are flagged false in
    ``fitted_days``.
    """

    factor_names: tuple[str, ...]
    calendar: TradingCalendar
    values: np.ndarray  # (n_factors, n_days)
    fitted_days: np.ndarray = field(default=None)  # bool (n_days,)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.factor_names), len(self.calendar)):
            raise ValueError("factor return matrix shape mismatch")
        object.__setattr__(self, "values", v)
        fitted = self.fitted_days
        if fitted is None:
            fitted = np.ones(len(self.calendar), dtype=bool)
        object.__setattr__(self, "fitted_days", np.asarray(fitted, dtype=bool))

    def window_values(self, end_month: str, q: int) -> np.ndarray:
        return self.values[:, self.calendar.window_day_mask(end_month, q)]


def constraint_matrix(
    loadings_day: np.ndarray, weights: np.ndarray, kind_masks: dict[str, np.ndarray], config: FitConfig
) -> np.ndarray:
    """Cap-weighted sum-to-zero constraint rows over the country and industry
    blocks; zero rows (empty blocks) are dropped."""
    rows = []
    for kind, enabled in ((KIND_COUNTRY, config.constrain_countries), (KIND_INDUSTRY, config.constrain_industries)):
        if not enabled:
            continue
        mask = kind_masks[kind]
        if not mask.any():
            continue
        row = np.zeros(loadings_day.shape[1])
        row[mask] = weights @ loadings_day[:, mask]
        if np.any(row != 0):
            rows.append(row)
    if not rows:
        return np.empty((0, loadings_day.shape[1]))
    return np.vstack(rows)


def _name_offending_factors(design: np.ndarray, names: tuple[str, ...], basis: np.ndarray) -> str:
    """Best-effort description of the factor block causing rank deficiency."""
    _, s, vt = np.linalg.svd(design, full_matrices=False)
    tol = s[0] * max(design.shape) * np.finfo(float).eps if len(s) and s[0] > 0 else 0.0
    null_dirs = vt[s <= tol] if len(s) else vt
    if null_dirs.size == 0:
        null_dirs = vt[-1:]
    weights = np.abs(basis @ null_dirs.T).max(axis=1)
    top = np.argsort(-weights)[:3]
    return ", ".join(names[i] for i in top if weights[i] > 1e-8 * weights[top[0]])


def fit_cross_section(
    returns_day: np.ndarray,
    loadings_day: np.ndarray,
    weights: np.ndarray,
    config: FitConfig,
    constraints: np.ndarray | None = None,
    factor_names: tuple[str, ...] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One day's constrained WLS fit.

    Minimizes sum_k w_k (r_k - X_k . f)^2 subject to C f = 0, via a
    null-space reparameterization. Returns (factor_returns, residuals);
    residuals satisfy r = X f + eps exactly by construction.
    """
    r = np.asarray(returns_day, dtype=float)
    x = np.asarray(loadings_day, dtype=float)
    w = np.asarray(weights, dtype=float)
    n, l = x.shape
    if np.any(w <= 0):
        raise ValueError("regression weights must be positive")
    c = np.empty((0, l)) if constraints is None else np.atleast_2d(constraints)
    if c.shape[0]:
        z = null_space(c)
        if z.shape[1] != l - c.shape[0]:
            raise SingularFitError("constraint matrix is not full row rank")
    else:
        z = np.eye(l)
    if n < z.shape[1]:
        raise SingularFitError(
            f"{n} companies cannot identify {z.shape[1]} free factor returns"
        )
    sw = np.sqrt(w)
    design = (x @ z) * sw[:, None]
    g, _, rank, _ = np.linalg.lstsq(design, r * sw, rcond=None)
    if rank < z.shape[1]:
        names = factor_names or tuple(f"f{i}" for i in range(l))
        culprits = _name_offending_factors(design, names, z)
        raise SingularFitError(f"rank-deficient design; factors involved: {culprits}")
    f = z @ g
    residuals = r - x @ f
    return f, residuals


def fit_panel(
    returns: ReturnPanel,
    loadings: LoadingPanel,
    mcaps: MarketCapSeries,
    mask: UniverseMask,
    config: FitConfig | None = None,
) -> tuple[FactorReturns, ResidualPanel]:
    """Fit one cross-section per trading day over eligible companies.

    Companies enter a day's fit when they are eligible that month, have an
    observed return that day and a positive (possibly proxied) market cap.
    Missing style loadings enter the design as zero exposure. Days that
    cannot be fitted produce factor returns of 0 and missing residuals.
    """
    config = config or FitConfig()
    factors = loadings.factors
    cal = returns.calendar
    l = len(factors)
    kind_masks = {k: factors.kind_mask(k) for k in (KIND_COUNTRY, KIND_INDUSTRY)}
    fvalues = np.zeros((l, len(cal)))
    fitted = np.zeros(len(cal), dtype=bool)
    residuals = np.full_like(returns.values, np.nan)

    month_cols = {m: i for i, m in enumerate(loadings.months)}
    for t in range(len(cal)):
        month = cal.months[cal.month_of_day[t]]
        mcol = month_cols[month]
        caps = mcaps.values[:, mcol]
        rows = (
            mask.eligible[:, mcol]
            & np.isfinite(returns.values[:, t])
            & np.isfinite(caps)
            & (caps > 0)
        )
        if not rows.any():
            continue
        x = np.nan_to_num(loadings.values[rows, :, mcol], nan=0.0)
        w = config.weights(caps[rows])
        c = constraint_matrix(x, w, kind_masks, config)
        try:
            f, eps = fit_cross_section(
                returns.values[rows, t], x, w, config, constraints=c, factor_names=factors.names
            )
        except (SingularFitError, ValueError) as exc:
            log.info("day %s not fitted (%s); factor returns zero-filled", cal.days[t], exc)
            continue
        fvalues[:, t] = f
        fitted[t] = True
        residuals[rows, t] = eps

    return (
        FactorReturns(factors.names, cal, fvalues, fitted),
        ReturnPanel(returns.companies, cal, residuals),
    )


def residual_variances(residuals: ResidualPanel, end_month: str, q: int) -> np.ndarray:
    """Per-company sample variance of residuals over the q-month window.

    Companies with fewer than two observed residuals in the window get 0.
    """
    window = window_slice(residuals, end_month, q)
    values = window.values
    counts = np.isfinite(values).sum(axis=1)
    out = np.zeros(len(values))
    enough = counts >= 2
    if enough.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            var = np.nanvar(values[enough], axis=1, ddof=1)
        out[enough] = np.nan_to_num(var, nan=0.0)
    return out


def write_factor_returns(fr: FactorReturns, path) -> None:
    days = fr.calendar.day_strings()
    with open(path, "w") as fh:
        fh.write("factor,date,value\n")
        for i, name in enumerate(fr.factor_names):
            for t, day in enumerate(days):
                fh.write(f"{name},{day},{fr.values[i, t]!r}\n")


def write_residuals(residuals: ResidualPanel, path) -> None:
    days = residuals.calendar.day_strings()
    with open(path, "w") as fh:
        fh.write("company,date,value\n")
        for i, c in enumerate(residuals.companies):
            row = residuals.values[i]
            for t in np.flatnonzero(np.isfinite(row)):
                fh.write(f"{c},{days[t]},{row[t]!r}\n")
