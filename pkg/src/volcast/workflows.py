"""Job-level orchestration behind the service endpoints.

Each function here is one unit of work: generate data, run a backtest,
produce a single estimate, or validate a data directory. The service layer
adapts these to request/response models; the CLI drives the service.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backtest import (
    BacktestResult,
    Period,
    PeriodSchedule,
    default_subsets,
    run_backtest,
    target_volatility,
    write_reports,
)
from .calendars import TradingCalendar, month_add, month_ordinal
from .config import RunConfig
from .factors import fit_panel, write_factor_returns, write_residuals
from .panels import (
    ConflictError,
    LoadingPanel,
    MarketCapSeries,
    ParseError,
    PreprocessResult,
    ReturnPanel,
    UniverseMask,
    apply_preprocessing,
    load_panels,
    load_returns,
)
from .portfolios import Portfolio, RegionMap, build_universe_of_portfolios
from .schemes import SchemeId, VolatilityEstimator
from .synth import SynthConfig, generate, write_csvs

log = logging.getLogger(__name__)


class JobError(ValueError):
    """A job could not run with the given inputs."""


@dataclass(frozen=True)
class LoadedUniverse:
    returns: ReturnPanel
    loadings: LoadingPanel
    mcaps: MarketCapSeries
    mask: UniverseMask
    cap_substitutions: int


def load_universe(config: RunConfig) -> LoadedUniverse:
    """Materialize panels from the data directory or the synth spec."""
    if config.data.synth is not None:
        data = generate(config.data.synth)
        returns, loadings, mcaps = data.returns, data.loadings, data.mcaps
    else:
        data_dir = Path(config.data.dir)
        returns_file = data_dir / "returns.csv"
        if not returns_file.exists():
            raise JobError(f"missing data file {returns_file}")
        calendar = _calendar_from_returns(returns_file)
        try:
            returns, loadings, mcaps = load_panels(
                returns_file, data_dir / "loadings.csv", data_dir / "mcaps.csv", calendar
            )
        except FileNotFoundError as exc:
            raise JobError(str(exc)) from exc
    pre = apply_preprocessing(loadings, mcaps, returns)
    return LoadedUniverse(returns, pre.loadings, pre.mcaps, pre.mask, len(pre.cap_substitutions))


def _calendar_from_returns(path) -> TradingCalendar:
    import pandas as pd

    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if "date" not in df.columns:
        raise JobError(f"{path}: no date column")
    try:
        return TradingCalendar.from_strings(df["date"].unique())
    except Exception as exc:
        raise JobError(f"{path}: {exc}") from exc


def region_map_for(config: RunConfig) -> RegionMap:
    if config.region_map:
        return RegionMap.from_csv(config.region_map)
    return RegionMap.default()


def subsets_for(config: RunConfig, region_map: RegionMap):
    if config.subsets == "default":
        return default_subsets(region_map)
    return [s.to_def() for s in config.subsets]


def run_synth_job(config: SynthConfig, out_dir) -> dict:
    data = generate(config)
    files = write_csvs(data, out_dir)
    return {
        "files": files,
        "n_companies": len(data.returns.companies),
        "n_days": len(data.returns.calendar),
        "n_months": len(data.loadings.months),
        "missing_cells": int(np.sum(~np.isfinite(data.returns.values))),
    }


def run_backtest_job(config: RunConfig, out_dir=None) -> tuple[BacktestResult, list[str]]:
    universe = load_universe(config)
    region_map = region_map_for(config)
    subsets = subsets_for(config, region_map)
    schedule = PeriodSchedule.build(
        config.schedule.first_period, config.schedule.num_periods, config.schedule.period_months
    )
    _check_schedule(universe.returns, schedule, config)
    schemes = config.schemes.expand()
    factor_fit = None
    if config.export_factor_fit or any(s.approach == "factor" for s in schemes):
        log.info("fitting daily factor cross-sections")
        factor_fit = fit_panel(universe.returns, universe.loadings, universe.mcaps, universe.mask)
    result = run_backtest(
        universe.returns,
        universe.loadings,
        universe.mcaps,
        universe.mask,
        schedule,
        schemes,
        subsets=subsets,
        region_map=region_map,
        rules=config.portfolio_rules.to_rules(),
        resamples=config.resamples_per_original,
        seed=config.seed,
        workers=config.workers,
        garch_history_months=config.garch_history_months,
        garch_min_obs=config.garch_min_obs,
        precomputed_factor_fit=factor_fit,
    )
    out = Path(out_dir if out_dir is not None else config.output_dir)
    files = write_reports(
        result,
        out,
        plot_data=config.plot_data,
        summary_extra={"config": config.model_dump(exclude_none=True)},
    )
    if config.export_factor_fit:
        write_factor_returns(factor_fit[0], out / "factor_returns.csv")
        write_residuals(factor_fit[1], out / "residuals.csv")
        files += ["factor_returns.csv", "residuals.csv"]
    return result, files


def _check_schedule(returns: ReturnPanel, schedule: PeriodSchedule, config: RunConfig) -> None:
    months = returns.calendar.months
    first = schedule.periods[0]
    last = schedule.periods[-1]
    if last.end_month not in months:
        raise JobError(
            f"schedule ends {last.end_month} but the calendar stops at {months[-1]}"
        )
    # the estimation windows must fit before the first period
    needed = max(config.garch_history_months, max(config.schemes.qs))
    window_start = month_add(first.start_month, -needed)
    if month_ordinal(window_start) < month_ordinal(months[0]):
        raise JobError(
            f"first period {first.start_month} needs {needed} months of history "
            f"but the calendar starts {months[0]}"
        )


def build_period_portfolios(
    config: RunConfig, universe: LoadedUniverse, region_map: RegionMap, period_start: str
) -> list[Portfolio]:
    portfolios, _ = build_universe_of_portfolios(
        universe.loadings,
        universe.mcaps,
        universe.mask,
        region_map,
        period_start,
        rules=config.portfolio_rules.to_rules(),
        resamples=config.resamples_per_original,
        seed=config.seed,
    )
    return portfolios


def _single_company_portfolio(company: str, period_start: str) -> Portfolio:
    from .portfolios import ORIGIN_ORIGINAL, KIND_LONG, UNRESTRICTED

    return Portfolio(
        id=f"company:{company}",
        kind=KIND_LONG,
        restriction=UNRESTRICTED,
        basis="mc",
        origin=ORIGIN_ORIGINAL,
        period_start=period_start,
        companies=(company,),
        weights=np.array([1.0]),
    )


def run_estimate_job(
    config: RunConfig, portfolio_id: str, period_start: str, scheme: SchemeId
) -> dict:
    universe = load_universe(config)
    region_map = region_map_for(config)

    if portfolio_id.startswith("company:"):
        company = portfolio_id.split(":", 1)[1]
        if company not in universe.returns.companies:
            raise JobError(f"unknown company {company!r}")
        portfolio = _single_company_portfolio(company, period_start)
    else:
        candidates = build_period_portfolios(config, universe, region_map, period_start)
        match = [p for p in candidates if p.id == portfolio_id]
        if not match:
            raise JobError(
                f"portfolio {portfolio_id!r} not found in period {period_start} "
                f"({len(candidates)} portfolios exist)"
            )
        portfolio = match[0]

    if scheme.approach == "factor":
        factor_returns, residuals = fit_panel(
            universe.returns, universe.loadings, universe.mcaps, universe.mask
        )
    else:
        factor_returns = None
        residuals = None
    estimator = VolatilityEstimator(
        universe.returns,
        universe.loadings,
        factor_returns,
        residuals,
        garch_history_months=config.garch_history_months,
        garch_min_obs=config.garch_min_obs,
    )
    estimate = estimator.estimate(portfolio, scheme)

    target = None
    period = Period(period_start, config.schedule.period_months)
    if period.end_month in universe.returns.calendar.months:
        target = target_volatility(portfolio, universe.returns, period)
    return {
        "portfolio_id": portfolio.id,
        "period": period_start,
        "scheme": scheme.label,
        "n_members": len(portfolio.companies),
        "estimate": estimate,
        "target": target,
    }


def run_validate_job(data_dir) -> list[dict]:
    """Schema and invariant checks over a data directory.

    Returns a list of violations; empty means the directory passes.
    """
    data_dir = Path(data_dir)
    violations: list[dict] = []

    def record(file, message):
        violations.append({"file": str(file.name), "message": message})

    returns_file = data_dir / "returns.csv"
    calendar = None
    if not returns_file.exists():
        record(returns_file, "file is missing")
    else:
        try:
            calendar = _calendar_from_returns(returns_file)
            load_returns(returns_file, calendar)
        except (ParseError, ConflictError, JobError, ValueError) as exc:
            record(returns_file, str(exc))
            calendar = None

    if calendar is not None:
        for name in ("loadings.csv", "mcaps.csv"):
            path = data_dir / name
            if not path.exists():
                record(path, "file is missing")
        if not violations:
            try:
                load_panels(
                    returns_file, data_dir / "loadings.csv", data_dir / "mcaps.csv", calendar
                )
            except (ParseError, ConflictError, ValueError) as exc:
                record(data_dir / "panels", str(exc))

    pf = data_dir / "portfolios.csv"
    if pf.exists():
        violations.extend(_validate_portfolio_file(pf))
    rm = data_dir / "regions.csv"
    if rm.exists():
        try:
            RegionMap.from_csv(rm)
        except ValueError as exc:
            violations.append({"file": "regions.csv", "message": str(exc)})
    return violations


def _validate_portfolio_file(path) -> list[dict]:
    import pandas as pd

    out = []
    df = pd.read_csv(path)
    expected = ["portfolio_id", "period", "company", "weight"]
    if list(df.columns) != expected:
        return [{"file": path.name, "message": f"expected header {','.join(expected)}"}]
    for (pid, period), group in df.groupby(["portfolio_id", "period"], sort=True):
        gross = float(np.sum(np.abs(group["weight"])))
        if abs(gross - 1.0) > 1e-9:
            out.append(
                {
                    "file": path.name,
                    "message": f"portfolio {pid} period {period}: absolute weights sum to {gross!r}, not 1",
                }
            )
    return out
