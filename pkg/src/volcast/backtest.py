"""Rolling backtest: target volatilities, Kendall tau-b, mean-tau tables.

Test periods are 3 calendar months wide and step forward one month. For
each period the portfolio family is rebuilt from pre-period data, every
scheme produces one estimate per portfolio, the realized target volatility
is computed over the period, and the rank agreement between estimates and
targets is scored per portfolio subset with Kendall's tau-b. Periods where
tau is undefined (all-tied, or fewer than two portfolios) are excluded from
the per-subset means and counted.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calendars import month_add
from .factors import FactorReturns, FitConfig, fit_panel
from .panels import (
    LoadingPanel,
    MarketCapSeries,
    ResidualPanel,
    ReturnPanel,
    UniverseMask,
)
from .portfolios import (
    ORIGIN_ORIGINAL,
    ORIGIN_RANDOM,
    KIND_LONG,
    KIND_LONG_SHORT,
    Portfolio,
    PortfolioRules,
    RegionMap,
    SkipRecord,
    build_universe_of_portfolios,
)
from .schemes import SchemeId, VolatilityEstimator, quadratic_form_vol, scheme_covariance

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Kendall's tau-b


def _tie_term(sorted_values: np.ndarray) -> int:
    """Sum over runs of equal values of s * (s - 1) / 2."""
    if len(sorted_values) == 0:
        return 0
    change = np.flatnonzero(sorted_values[1:] != sorted_values[:-1])
    sizes = np.diff(np.concatenate(([0], change + 1, [len(sorted_values)])))
    return int(np.sum(sizes * (sizes - 1) // 2))


def _merge_count(values: list) -> tuple[list, int]:
    n = len(values)
    if n <= 1:
        return values, 0
    left, cl = _merge_count(values[: n // 2])
    right, cr = _merge_count(values[n // 2 :])
    merged = []
    count = cl + cr
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
            count += len(left) - i
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, count


def kendall_tau_b(x, y) -> float:
    """Kendall's tau-b in O(n log n) (Knight's algorithm).

    tau_b = (C - D) / sqrt((C + D + T_x) (C + D + T_y)) with tie terms.
    Returns NaN when either vector is all-tied (tau undefined); callers
    exclude those from averages.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length vectors")
    n = len(x)
    if n < 2:
        raise ValueError("tau requires at least two observations")
    perm = np.lexsort((y, x))
    xs, ys = x[perm], y[perm]

    total = n * (n - 1) // 2
    xtie = _tie_term(xs)
    ytie = _tie_term(np.sort(y))
    if xtie == total or ytie == total:
        return float("nan")

    # pairs tied in both: runs of equal (x, y)
    same = (xs[1:] == xs[:-1]) & (ys[1:] == ys[:-1])
    both = 0
    run = 1
    for flag in same:
        if flag:
            run += 1
        else:
            both += run * (run - 1) // 2
            run = 1
    both += run * (run - 1) // 2

    _, discordant = _merge_count(list(ys))
    c_minus_d = total - xtie - ytie + both - 2 * discordant
    return c_minus_d / math.sqrt((total - xtie) * (total - ytie))


# ---------------------------------------------------------------------------
# Schedule


@dataclass(frozen=True)
class Period:
    """A test period of consecutive calendar months."""

    start_month: str
    n_months: int = 3

    @property
    def months(self) -> tuple[str, ...]:
        return tuple(month_add(self.start_month, k) for k in range(self.n_months))

    @property
    def end_month(self) -> str:
        return month_add(self.start_month, self.n_months - 1)

    @property
    def label(self) -> str:
        return self.start_month


@dataclass(frozen=True)
class PeriodSchedule:
    """Monthly-stepping schedule of fixed-width test periods."""

    periods: tuple[Period, ...]

    @classmethod
    def build(cls, first_start: str, count: int, width: int = 3) -> "PeriodSchedule":
        if count < 1:
            raise ValueError("schedule needs at least one period")
        return cls(tuple(Period(month_add(first_start, k), width) for k in range(count)))

    def __len__(self) -> int:
        return len(self.periods)


# ---------------------------------------------------------------------------
# Target volatility


def target_volatility(portfolio: Portfolio, returns: ReturnPanel, period: Period) -> float:
    """Realized portfolio volatility over the test period.

    Quadratic form against the pairwise sample covariance of the in-period
    returns, with the usual missing-data handling: members fully missing in
    the period contribute zero volatility.
    """
    mask = returns.calendar.day_mask_for_months(period.start_month, period.end_month)
    values = returns.values[returns.rows(portfolio.companies)][:, mask]
    est = scheme_covariance(values)
    return quadratic_form_vol(portfolio.weights, est.cov)


def _universe_targets(
    portfolios: list[Portfolio], returns: ReturnPanel, period: Period
) -> dict[str, float]:
    """Targets for many overlapping portfolios from one universe-level
    period covariance (repaired once, sliced per portfolio)."""
    from .covariance import decompose, pairwise_covariance, repair_correlation

    mask = returns.calendar.day_mask_for_months(period.start_month, period.end_month)
    cov, _ = pairwise_covariance(returns.values[:, mask])
    stdevs, corr = decompose(cov)
    corr, _ = repair_correlation(corr)
    out = {}
    for p in portfolios:
        rows = returns.rows(p.companies)
        d = stdevs[rows]
        out[p.id] = quadratic_form_vol(p.weights, corr[np.ix_(rows, rows)] * np.outer(d, d))
    return out


# ---------------------------------------------------------------------------
# Subsets


@dataclass(frozen=True)
class SubsetDef:
    """A named portfolio filter for tau aggregation."""

    name: str
    kind: str | None = None  # long | long_short
    origin: str | None = None  # original | random
    restriction: str | None = None  # restriction label, e.g. "subregion=Northern America"

    def matches(self, meta: "PortfolioMeta") -> bool:
        if self.kind is not None and meta.kind != self.kind:
            return False
        if self.origin is not None and meta.origin != self.origin:
            return False
        if self.restriction is not None and meta.restriction != self.restriction:
            return False
        return True


def default_subsets(region_map: RegionMap | None = None) -> list[SubsetDef]:
    """The subsets reported in the study: long and long/short always split,
    original and random split, plus unrestricted-only and (when the region
    map knows it) Northern-America-only variants."""
    subsets = []
    for kind, tag in ((KIND_LONG, "long"), (KIND_LONG_SHORT, "long_short")):
        subsets.append(SubsetDef(f"all_{tag}", kind=kind))
        for origin in (ORIGIN_ORIGINAL, ORIGIN_RANDOM):
            subsets.append(SubsetDef(f"all_{origin}_{tag}", kind=kind, origin=origin))
            subsets.append(
                SubsetDef(
                    f"unrestricted_{origin}_{tag}",
                    kind=kind,
                    origin=origin,
                    restriction="unrestricted",
                )
            )
    if region_map is not None and "Northern America" in region_map.subregion_names:
        for kind, tag in ((KIND_LONG, "long"), (KIND_LONG_SHORT, "long_short")):
            for origin in (ORIGIN_ORIGINAL, ORIGIN_RANDOM):
                subsets.append(
                    SubsetDef(
                        f"north_america_{origin}_{tag}",
                        kind=kind,
                        origin=origin,
                        restriction="subregion=Northern America",
                    )
                )
    return subsets


# ---------------------------------------------------------------------------
# Backtest engine


@dataclass(frozen=True)
class PortfolioMeta:
    id: str
    kind: str
    origin: str
    restriction: str
    basis: str
    n_members: int


@dataclass(frozen=True)
class GarchDiagnostic:
    series: str
    period: str
    mu: float
    omega: float
    alpha: float
    beta: float
    status: str


@dataclass
class PeriodResult:
    period: str
    portfolios: list[PortfolioMeta]
    targets: dict[str, float]
    estimates: dict[str, dict[str, float]]  # scheme label -> portfolio id -> estimate
    skips: list[SkipRecord]
    garch: list[GarchDiagnostic]


@dataclass(frozen=True)
class BacktestContext:
    returns: ReturnPanel
    loadings: LoadingPanel
    mcaps: MarketCapSeries
    mask: UniverseMask
    factor_returns: FactorReturns
    residuals: ResidualPanel
    region_map: RegionMap
    schemes: tuple[SchemeId, ...]
    rules: PortfolioRules
    resamples: int
    seed: int
    garch_history_months: int = 36
    garch_min_obs: int = 100
    estimator_factory: object = None  # callable(ctx) -> estimator, for testing


def _make_estimator(ctx: BacktestContext):
    if ctx.estimator_factory is not None:
        return ctx.estimator_factory(ctx)
    return VolatilityEstimator(
        ctx.returns,
        ctx.loadings,
        ctx.factor_returns,
        ctx.residuals,
        garch_history_months=ctx.garch_history_months,
        garch_min_obs=ctx.garch_min_obs,
    )


def run_single_period(ctx: BacktestContext, period: Period) -> PeriodResult:
    portfolios, skips = build_universe_of_portfolios(
        ctx.loadings,
        ctx.mcaps,
        ctx.mask,
        ctx.region_map,
        period.start_month,
        rules=ctx.rules,
        resamples=ctx.resamples,
        seed=ctx.seed,
    )
    estimator = _make_estimator(ctx)
    targets = _universe_targets(portfolios, ctx.returns, period)
    estimates: dict[str, dict[str, float]] = {}
    for scheme in ctx.schemes:
        estimates[scheme.label] = {p.id: estimator.estimate(p, scheme) for p in portfolios}
    meta = [
        PortfolioMeta(p.id, p.kind, p.origin, p.restriction.label, p.basis, len(p.companies))
        for p in portfolios
    ]
    garch_rows = []
    if hasattr(estimator, "garch_diagnostics"):
        garch_rows = [
            GarchDiagnostic(series, period.label, f.mu, f.omega, f.alpha, f.beta, f.status)
            for series, _, f in estimator.garch_diagnostics()
        ]
    return PeriodResult(period.label, meta, targets, estimates, skips, garch_rows)


_WORKER_CTX: BacktestContext | None = None


def _init_worker(ctx: BacktestContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_run(period: Period) -> PeriodResult:
    return run_single_period(_WORKER_CTX, period)


@dataclass
class TauReport:
    """Per-period and mean Kendall tau-b per (scheme, subset)."""

    subsets: list[str]
    schemes: list[SchemeId]
    periods: list[str]
    per_period: dict[tuple[str, str, str], float]  # (subset, scheme label, period)
    subset_sizes: dict[tuple[str, str], int] = field(default_factory=dict)
    undefined: dict[tuple[str, str], int] = field(default_factory=dict)

    def mean_tau(self, subset: str, scheme_label: str) -> float:
        vals = [
            self.per_period[(subset, scheme_label, p)]
            for p in self.periods
            if not math.isnan(self.per_period.get((subset, scheme_label, p), float("nan")))
        ]
        return float(np.mean(vals)) if vals else float("nan")


@dataclass
class BacktestResult:
    report: TauReport
    period_results: list[PeriodResult]
    schemes: list[SchemeId]
    subsets: list[SubsetDef]


def run_backtest(
    returns: ReturnPanel,
    loadings: LoadingPanel,
    mcaps: MarketCapSeries,
    mask: UniverseMask,
    schedule: PeriodSchedule,
    schemes: list[SchemeId],
    subsets: list[SubsetDef] | None = None,
    region_map: RegionMap | None = None,
    rules: PortfolioRules = PortfolioRules(),
    resamples: int = 2,
    seed: int = 0,
    workers: int = 1,
    fit_config: FitConfig | None = None,
    garch_history_months: int = 36,
    garch_min_obs: int = 100,
    estimator_factory=None,
    precomputed_factor_fit: tuple[FactorReturns, ResidualPanel] | None = None,
) -> BacktestResult:
    """Run the full rolling evaluation and aggregate tau tables."""
    region_map = region_map or RegionMap.default()
    subsets = subsets if subsets is not None else default_subsets(region_map)
    if not schemes:
        raise ValueError("at least one scheme is required")

    need_factor = any(s.approach == "factor" for s in schemes)
    if precomputed_factor_fit is not None:
        factor_returns, residuals = precomputed_factor_fit
    elif need_factor:
        log.info("fitting daily factor cross-sections")
        factor_returns, residuals = fit_panel(returns, loadings, mcaps, mask, fit_config)
    else:
        factor_returns = FactorReturns(
            loadings.factors.names,
            returns.calendar,
            np.zeros((len(loadings.factors), len(returns.calendar))),
            np.zeros(len(returns.calendar), dtype=bool),
        )
        residuals = ReturnPanel(
            returns.companies, returns.calendar, np.full_like(returns.values, np.nan)
        )

    ctx = BacktestContext(
        returns=returns,
        loadings=loadings,
        mcaps=mcaps,
        mask=mask,
        factor_returns=factor_returns,
        residuals=residuals,
        region_map=region_map,
        schemes=tuple(schemes),
        rules=rules,
        resamples=resamples,
        seed=seed,
        garch_history_months=garch_history_months,
        garch_min_obs=garch_min_obs,
        estimator_factory=estimator_factory,
    )

    periods = list(schedule.periods)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            results = list(pool.map(_worker_run, periods))
    else:
        results = [run_single_period(ctx, p) for p in periods]

    report = _aggregate(results, schemes, subsets)
    return BacktestResult(report, results, list(schemes), list(subsets))


def _aggregate(
    results: list[PeriodResult], schemes: list[SchemeId], subsets: list[SubsetDef]
) -> TauReport:
    per_period: dict[tuple[str, str, str], float] = {}
    sizes: dict[tuple[str, str], int] = {}
    undefined: dict[tuple[str, str], int] = {}
    for res in results:
        for subset in subsets:
            ids = [m.id for m in res.portfolios if subset.matches(m)]
            sizes[(subset.name, res.period)] = len(ids)
            for scheme in schemes:
                key = (subset.name, scheme.label, res.period)
                if len(ids) < 2:
                    per_period[key] = float("nan")
                else:
                    est = np.array([res.estimates[scheme.label][i] for i in ids])
                    tgt = np.array([res.targets[i] for i in ids])
                    per_period[key] = kendall_tau_b(est, tgt)
                if math.isnan(per_period[key]):
                    undefined[(subset.name, scheme.label)] = (
                        undefined.get((subset.name, scheme.label), 0) + 1
                    )
    return TauReport(
        subsets=[s.name for s in subsets],
        schemes=list(schemes),
        periods=[r.period for r in results],
        per_period=per_period,
        subset_sizes=sizes,
        undefined=undefined,
    )


# ---------------------------------------------------------------------------
# Report emission


def _scheme_rows(schemes: list[SchemeId]) -> tuple[list[tuple[str, str]], list[int]]:
    row_order = []
    for approach in ("direct", "factor"):
        for model in ("naive", "garch"):
            if any(s.approach == approach and s.variance_model == model for s in schemes):
                row_order.append((approach, model))
    qs = sorted({s.q for s in schemes})
    return row_order, qs


def write_reports(
    result: BacktestResult, out_dir, plot_data: bool = False, summary_extra: dict | None = None
) -> list[str]:
    """Write the mean-tau table per subset plus the flat result CSVs.

    Returns the list of files written (relative names). All output is
    deterministic: floats use repr, rows are explicitly ordered, and the
    summary carries no timestamps or absolute paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result.report
    row_order, qs = _scheme_rows(result.schemes)
    by_key = {(s.approach, s.variance_model, s.q): s for s in result.schemes}
    files: list[str] = []

    for subset in report.subsets:
        name = f"mean_tau_{subset}.csv"
        with open(out / name, "w") as fh:
            fh.write("method," + ",".join(f"q={q}" for q in qs) + "\n")
            for approach, model in row_order:
                cells = []
                for q in qs:
                    scheme = by_key.get((approach, model, q))
                    cells.append(repr(report.mean_tau(subset, scheme.label)) if scheme else "")
                fh.write(f"{approach}_{model}," + ",".join(cells) + "\n")
        files.append(name)

    if plot_data:
        for subset in report.subsets:
            name = f"tau_series_{subset}.csv"
            with open(out / name, "w") as fh:
                fh.write("period,approach,variance_model,q,tau\n")
                for period in report.periods:
                    for s in result.schemes:
                        tau = report.per_period[(subset, s.label, period)]
                        fh.write(f"{period},{s.approach},{s.variance_model},{s.q},{tau!r}\n")
            files.append(name)

    with open(out / "targets.csv", "w") as fh:
        fh.write("portfolio,period,target\n")
        for res in result.period_results:
            for m in res.portfolios:
                fh.write(f"{m.id},{res.period},{res.targets[m.id]!r}\n")
    files.append("targets.csv")

    with open(out / "estimates.csv", "w") as fh:
        fh.write("portfolio,period,approach,variance_model,q,estimate\n")
        for res in result.period_results:
            for s in result.schemes:
                for m in res.portfolios:
                    fh.write(
                        f"{m.id},{res.period},{s.approach},{s.variance_model},{s.q},"
                        f"{res.estimates[s.label][m.id]!r}\n"
                    )
    files.append("estimates.csv")

    with open(out / "portfolio_members.csv", "w") as fh:
        fh.write("portfolio_id,period,kind,origin,restriction,basis,n_members\n")
        for res in result.period_results:
            for m in res.portfolios:
                fh.write(
                    f"{m.id},{res.period},{m.kind},{m.origin},{m.restriction},{m.basis},{m.n_members}\n"
                )
    files.append("portfolio_members.csv")

    with open(out / "garch_diagnostics.csv", "w") as fh:
        fh.write("series,period,mu,omega,alpha,beta,status\n")
        for res in result.period_results:
            for g in res.garch:
                fh.write(
                    f"{g.series},{g.period},{g.mu!r},{g.omega!r},{g.alpha!r},{g.beta!r},{g.status}\n"
                )
    files.append("garch_diagnostics.csv")

    with open(out / "skips.csv", "w") as fh:
        fh.write("portfolio_id,period,reason\n")
        for res in result.period_results:
            for s in res.skips:
                fh.write(f"{s.portfolio_id},{s.period_start},{s.reason}\n")
    files.append("skips.csv")

    summary = {
        "periods": report.periods,
        "schemes": [s.label for s in result.schemes],
        "subsets": {
            subset: {
                f"{approach}_{model}": {
                    f"q={q}": report.mean_tau(subset, by_key[(approach, model, q)].label)
                    for q in qs
                    if (approach, model, q) in by_key
                }
                for approach, model in row_order
            }
            for subset in report.subsets
        },
        "subset_sizes": {
            f"{name}|{period}": n for (name, period), n in sorted(report.subset_sizes.items())
        },
        "undefined_tau": {
            f"{name}|{scheme}": n for (name, scheme), n in sorted(report.undefined.items())
        },
        "n_skips": sum(len(r.skips) for r in result.period_results),
    }
    if summary_extra:
        summary.update(summary_extra)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    files.append("summary.json")
    return files
