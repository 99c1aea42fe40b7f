"""Synthetic universe generator with known ground truth.

Returns are composed exactly from the factor model: month-constant loadings
(cap-centered styles, one-hot countries and industries, a unit market
column), simulated factor returns (independent Gaussians with per-factor
piecewise volatility regimes, or GARCH(1,1) paths), plus independent
Gaussian residuals. Missing return cells are punched i.i.d. All randomness
flows from the single seed, so generation is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .calendars import TradingCalendar
from .garch import simulate_garch
from .panels import (
    FactorSet,
    LoadingPanel,
    MARKET_FACTOR,
    MarketCapSeries,
    ReturnPanel,
    factor_kind,
    write_loadings,
    write_mcaps,
    write_returns,
)
from .portfolios import RegionMap


class VolRegime(BaseModel):
    """One segment of a piecewise daily-volatility schedule."""

    start_day: int = Field(ge=0)
    vol: float = Field(gt=0)


class GarchSpec(BaseModel):
    omega: float = Field(gt=0)
    alpha: float = Field(ge=0)
    beta: float = Field(ge=0)

    @model_validator(mode="after")
    def _stationary(self):
        if self.alpha + self.beta >= 1:
            raise ValueError("alpha + beta must be < 1")
        return self


class SynthConfig(BaseModel):
    """Knobs for the synthetic universe."""

    n_companies: int = Field(default=200, ge=1)
    n_styles: int = Field(default=3, ge=0)
    n_countries: int = Field(default=3, ge=0)
    n_industries: int = Field(default=2, ge=0)
    n_days: int = Field(default=500, ge=1)
    start: str = "2010-01"
    seed: int = 0
    # per-factor piecewise vol schedules; factors not listed use the
    # per-kind defaults below
    factor_vol_regimes: dict[str, list[VolRegime]] = Field(default_factory=dict)
    market_vol: float = 0.010
    style_vol: float = 0.004
    country_vol: float = 0.006
    industry_vol: float = 0.005
    residual_vol: float = Field(default=0.005, ge=0)
    missing_rate: float = Field(default=0.0, ge=0, lt=1)
    garch_params: dict[str, GarchSpec] = Field(default_factory=dict)
    cap_median: float = Field(default=2e9, gt=0)
    cap_sigma: float = Field(default=1.0, ge=0)
    cap_monthly_vol: float = Field(default=0.0, ge=0)
    loading_monthly_noise: float = Field(default=0.0, ge=0)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """What the generator actually used, for oracle tests."""

    factor_names: tuple[str, ...]
    factor_vols: np.ndarray  # (n_factors, n_days) daily stdevs (garch: realized)
    factor_values: np.ndarray  # (n_factors, n_days) the drawn factor returns
    residual_vols: np.ndarray  # (n_companies,)
    company_country: tuple[str, ...]
    company_industry: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class SynthData:
    returns: ReturnPanel
    loadings: LoadingPanel
    mcaps: MarketCapSeries
    truth: GroundTruth


def _default_countries(n: int) -> list[str]:
    codes = sorted(RegionMap.default().regions)
    if n <= len(codes):
        return codes[:n]
    extra = [f"X{i:02d}" for i in range(n - len(codes))]
    return codes + extra


def _factor_names(config: SynthConfig) -> FactorSet:
    names = [f"style:s{i + 1:02d}" for i in range(config.n_styles)]
    names += [f"country:{c}" for c in _default_countries(config.n_countries)]
    names += [f"industry:i{i + 1:02d}" for i in range(config.n_industries)]
    names.append(MARKET_FACTOR)
    return FactorSet(tuple(names))


def _vol_path(config: SynthConfig, name: str, kind_vol: float, n_days: int) -> np.ndarray:
    path = np.full(n_days, kind_vol)
    for seg in sorted(config.factor_vol_regimes.get(name, []), key=lambda s: s.start_day):
        path[seg.start_day :] = seg.vol
    return path


def generate(config: SynthConfig) -> SynthData:
    """Generate the synthetic panels plus their ground truth."""
    rng = np.random.default_rng(config.seed)
    calendar = TradingCalendar.business_days(config.start, config.n_days)
    months = calendar.months
    n_months = len(months)
    factors = _factor_names(config)
    n, l = config.n_companies, len(factors)
    companies = tuple(f"C{i + 1:04d}" for i in range(n))

    # assignments: shuffled round-robin keeps every country/industry populated
    countries = factors.countries
    industries = factors.industries
    country_of = tuple(
        countries[i % len(countries)] if countries else "" for i in rng.permutation(n)
    )
    industry_of = tuple(
        industries[i % len(industries)] if industries else "" for i in rng.permutation(n)
    )

    # market caps: log-normal base, optional monthly random walk
    base = config.cap_median * np.exp(config.cap_sigma * rng.standard_normal(n))
    if config.cap_monthly_vol > 0:
        walk = np.cumsum(config.cap_monthly_vol * rng.standard_normal((n, n_months)), axis=1)
        caps = base[:, None] * np.exp(walk)
    else:
        caps = np.repeat(base[:, None], n_months, axis=1)

    # loadings: one-hot countries/industries, unit market, cap-centered styles
    loadings = np.zeros((n, l, n_months))
    loadings[:, factors.index(MARKET_FACTOR), :] = 1.0
    for i in range(n):
        if country_of[i]:
            loadings[i, factors.index(country_of[i]), :] = 1.0
        if industry_of[i]:
            loadings[i, factors.index(industry_of[i]), :] = 1.0
    style_base = rng.standard_normal((n, config.n_styles))
    for j, style in enumerate(factors.styles):
        col = factors.index(style)
        for m in range(n_months):
            x = style_base[:, j]
            if config.loading_monthly_noise > 0:
                x = x + config.loading_monthly_noise * rng.standard_normal(n)
            w = caps[:, m]
            x = x - (w @ x) / np.sum(w)  # cap-centered per month
            loadings[:, col, m] = x

    # factor returns
    fvols = np.empty((l, config.n_days))
    fvalues = np.empty((l, config.n_days))
    kind_vol = {
        "style": config.style_vol,
        "country": config.country_vol,
        "industry": config.industry_vol,
        "market": config.market_vol,
    }
    for j, name in enumerate(factors.names):
        if name in config.garch_params:
            spec = config.garch_params[name]
            fvalues[j], h = simulate_garch(
                config.n_days, spec.omega, spec.alpha, spec.beta, rng=rng, return_variance=True
            )
            fvols[j] = np.sqrt(h)
        else:
            fvols[j] = _vol_path(config, name, kind_vol[factor_kind(name)], config.n_days)
            fvalues[j] = fvols[j] * rng.standard_normal(config.n_days)

    # compose returns from the factor model
    resid_vols = np.full(n, config.residual_vol)
    values = np.empty((n, config.n_days))
    month_of_day = calendar.month_of_day
    for m in range(n_months):
        day_cols = np.flatnonzero(month_of_day == m)
        values[:, day_cols] = loadings[:, :, m] @ fvalues[:, day_cols]
    if config.residual_vol > 0:
        values += resid_vols[:, None] * rng.standard_normal((n, config.n_days))
    if config.missing_rate > 0:
        holes = rng.random((n, config.n_days)) < config.missing_rate
        values = np.where(holes, np.nan, values)

    return SynthData(
        returns=ReturnPanel(companies, calendar, values),
        loadings=LoadingPanel(companies, factors, months, loadings),
        mcaps=MarketCapSeries(companies, months, caps),
        truth=GroundTruth(
            factor_names=factors.names,
            factor_vols=fvols,
            factor_values=fvalues,
            residual_vols=resid_vols,
            company_country=country_of,
            company_industry=industry_of,
        ),
    )


def write_csvs(data: SynthData, out_dir) -> list[str]:
    """Write the same CSV schemas the loaders read."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_returns(data.returns, out / "returns.csv")
    write_loadings(data.loadings, out / "loadings.csv")
    write_mcaps(data.mcaps, out / "mcaps.csv")
    return ["returns.csv", "loadings.csv", "mcaps.csv"]
