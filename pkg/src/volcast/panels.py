"""Panels of returns, loadings and market caps on a shared trading calendar.

Missing data is explicit: every cell is either a finite float or NaN.
Factor ids are self-describing strings: ``style:<name>``, ``country:<code>``,
``industry:<name>`` and the literal ``market``, so the CSV schemas stay
single-column and the factor kind never has to be guessed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .calendars import TradingCalendar, month_of_date

log = logging.getLogger(__name__)

MARKET_FACTOR = "market"
KIND_STYLE = "style"
KIND_COUNTRY = "country"
KIND_INDUSTRY = "industry"
KIND_MARKET = "market"


class ParseError(ValueError):
    """A data file does not conform to its CSV schema."""


class ConflictError(ValueError):
    """Duplicate observations for the same key."""


def factor_kind(factor_id: str) -> str:
    if factor_id == MARKET_FACTOR:
        return KIND_MARKET
    kind = factor_id.split(":", 1)[0]
    if kind not in (KIND_STYLE, KIND_COUNTRY, KIND_INDUSTRY):
        raise ParseError(
            f"unknown factor id {factor_id!r}; expected style:<n>, country:<c>, "
            f"industry:<n> or 'market'"
        )
    return kind


def country_code(factor_id: str) -> str:
    """The ISO code carried by a country factor id."""
    return factor_id.split(":", 1)[1]


@dataclass(frozen=True)
class FactorSet:
    """Ordered factor universe: styles, countries, industries, then market."""

    names: tuple[str, ...]

    def __post_init__(self):
        kinds = tuple(factor_kind(n) for n in self.names)
        if kinds.count(KIND_MARKET) != 1:
            raise ValueError("factor set must contain exactly one 'market' factor")
        order = {KIND_STYLE: 0, KIND_COUNTRY: 1, KIND_INDUSTRY: 2, KIND_MARKET: 3}
        ranked = sorted(self.names, key=lambda n: (order[factor_kind(n)], n))
        object.__setattr__(self, "names", tuple(ranked))
        object.__setattr__(self, "_kinds", tuple(factor_kind(n) for n in self.names))
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def of_kind(self, kind: str) -> tuple[str, ...]:
        return tuple(n for n, k in zip(self.names, self._kinds) if k == kind)

    def kind_mask(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k in self._kinds], dtype=bool)

    @property
    def styles(self) -> tuple[str, ...]:
        return self.of_kind(KIND_STYLE)

    @property
    def countries(self) -> tuple[str, ...]:
        return self.of_kind(KIND_COUNTRY)

    @property
    def industries(self) -> tuple[str, ...]:
        return self.of_kind(KIND_INDUSTRY)


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """Companies x trading-days matrix of daily log-returns (NaN = missing)."""

    companies: tuple[str, ...]
    calendar: TradingCalendar
    values: np.ndarray  # (n_companies, n_days)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.companies), len(self.calendar)):
            raise ValueError(
                f"return panel shape {v.shape} does not match "
                f"{len(self.companies)} companies x {len(self.calendar)} days"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_row", {c: i for i, c in enumerate(self.companies)})

    @property
    def n_companies(self) -> int:
        return len(self.companies)

    def row(self, company: str) -> int:
        return self._row[company]

    def rows(self, companies) -> np.ndarray:
        return np.array([self._row[c] for c in companies], dtype=np.intp)

    def restrict(self, companies) -> "ReturnPanel":
        idx = self.rows(companies)
        return ReturnPanel(tuple(companies), self.calendar, self.values[idx])

    def window(self, end_month: str, q: int) -> "ReturnPanel":
        return window_slice(self, end_month, q)

    def observed_by_month(self) -> np.ndarray:
        """(n_companies, n_months) count of non-missing returns per month."""
        present = np.isfinite(self.values)
        n_months = len(self.calendar.months)
        counts = np.zeros((self.n_companies, n_months), dtype=np.int64)
        np.add.at(counts.T, self.calendar.month_of_day, present.T.astype(np.int64))
        return counts


# Residuals from the factor fit share the panel layout exactly.
ResidualPanel = ReturnPanel


@dataclass(frozen=True, eq=False)
class LoadingPanel:
    """Companies x factors x months tensor of factor loadings (NaN = missing).

    Loadings are constant within a month by construction; the market column
    is 1 wherever the company is in-universe that month.
    """

    companies: tuple[str, ...]
    factors: FactorSet
    months: tuple[str, ...]
    values: np.ndarray  # (n_companies, n_factors, n_months)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = (len(self.companies), len(self.factors), len(self.months))
        if v.shape != expected:
            raise ValueError(f"loading panel shape {v.shape}, expected {expected}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_row", {c: i for i, c in enumerate(self.companies)})
        object.__setattr__(self, "_mcol", {m: i for i, m in enumerate(self.months)})

    def month_index(self, month: str) -> int:
        try:
            return self._mcol[month]
        except KeyError:
            raise KeyError(f"month {month!r} not covered by loadings") from None

    def month_matrix(self, month: str) -> np.ndarray:
        """(n_companies, n_factors) loadings for one month."""
        return self.values[:, :, self.month_index(month)]

    def rows(self, companies) -> np.ndarray:
        return np.array([self._row[c] for c in companies], dtype=np.intp)


@dataclass(frozen=True, eq=False)
class MarketCapSeries:
    """Companies x months market capitalizations (NaN = missing, else > 0)."""

    companies: tuple[str, ...]
    months: tuple[str, ...]
    values: np.ndarray  # (n_companies, n_months)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = (len(self.companies), len(self.months))
        if v.shape != expected:
            raise ValueError(f"market cap shape {v.shape}, expected {expected}")
        present = np.isfinite(v)
        if np.any(v[present] <= 0):
            raise ValueError("market caps must be strictly positive where present")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_mcol", {m: i for i, m in enumerate(self.months)})

    def month_vector(self, month: str) -> np.ndarray:
        try:
            return self.values[:, self._mcol[month]]
        except KeyError:
            raise KeyError(f"month {month!r} not covered by market caps") from None


@dataclass(frozen=True, eq=False)
class UniverseMask:
    """Company x month eligibility: false iff no registered loadings or no
    registered return that month."""

    companies: tuple[str, ...]
    months: tuple[str, ...]
    eligible: np.ndarray  # bool (n_companies, n_months)

    def __post_init__(self):
        e = np.asarray(self.eligible, dtype=bool)
        if e.shape != (len(self.companies), len(self.months)):
            raise ValueError("eligibility mask shape mismatch")
        object.__setattr__(self, "eligible", e)
        object.__setattr__(self, "_mcol", {m: i for i, m in enumerate(self.months)})

    def month_vector(self, month: str) -> np.ndarray:
        return self.eligible[:, self._mcol[month]]


@dataclass(frozen=True)
class CapSubstitution:
    company: str
    month: str
    value: float
    method: str  # prev_weight_squared | cross_sectional_median


@dataclass(frozen=True)
class PreprocessResult:
    loadings: LoadingPanel
    mcaps: MarketCapSeries
    mask: UniverseMask
    cap_substitutions: tuple[CapSubstitution, ...]

    def __iter__(self):
        return iter((self.loadings, self.mcaps, self.mask))


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path, columns: tuple[str, ...]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if list(df.columns) != list(columns):
        raise ParseError(f"{path}: expected header {','.join(columns)}, got {','.join(df.columns)}")
    return df


def _parse_floats(df: pd.DataFrame, col: str, path) -> np.ndarray:
    vals = pd.to_numeric(df[col], errors="coerce").to_numpy()
    bad = np.flatnonzero(~np.isfinite(vals))
    if len(bad):
        # +2: one for the header row, one for 1-based line numbers
        raise ParseError(f"{path}: line {bad[0] + 2}: bad {col} value {df[col].iloc[bad[0]]!r}")
    return vals


def _check_duplicates(df: pd.DataFrame, keys: list[str], path) -> None:
    dup = df.duplicated(subset=keys)
    if dup.any():
        row = df[dup].iloc[0]
        key = ", ".join(f"{k}={row[k]!r}" for k in keys)
        raise ConflictError(f"{path}: duplicate entry for ({key})")


def load_returns(path, calendar: TradingCalendar) -> ReturnPanel:
    df = _read_csv(path, ("company", "date", "log_return"))
    if df.empty:
        return ReturnPanel((), calendar, np.empty((0, len(calendar))))
    vals = _parse_floats(df, "log_return", path)
    _check_duplicates(df, ["company", "date"], path)
    day_index = {str(d): i for i, d in enumerate(calendar.days)}
    unknown = set(df["date"]) - set(day_index)
    if unknown:
        raise ParseError(f"{path}: date {sorted(unknown)[0]} is not in the trading calendar")
    companies = tuple(sorted(set(df["company"])))
    row = {c: i for i, c in enumerate(companies)}
    values = np.full((len(companies), len(calendar)), np.nan)
    ridx = df["company"].map(row).to_numpy()
    cidx = df["date"].map(day_index).to_numpy()
    values[ridx, cidx] = vals
    return ReturnPanel(companies, calendar, values)


def load_loadings(path, calendar: TradingCalendar) -> LoadingPanel:
    df = _read_csv(path, ("company", "month", "factor", "value"))
    months = calendar.months
    if df.empty:
        return LoadingPanel((), FactorSet((MARKET_FACTOR,)), months, np.empty((0, 1, len(months))))
    vals = _parse_floats(df, "value", path)
    _check_duplicates(df, ["company", "month", "factor"], path)
    unknown = set(df["month"]) - set(months)
    if unknown:
        raise ParseError(f"{path}: month {sorted(unknown)[0]} is not in the trading calendar")
    names = set(df["factor"])
    for n in names:
        factor_kind(n)  # validates the id format
    names.add(MARKET_FACTOR)
    factors = FactorSet(tuple(names))
    companies = tuple(sorted(set(df["company"])))
    row = {c: i for i, c in enumerate(companies)}
    fcol = {f: factors.index(f) for f in factors.names}
    mcol = {m: i for i, m in enumerate(months)}
    values = np.full((len(companies), len(factors), len(months)), np.nan)
    values[
        df["company"].map(row).to_numpy(),
        df["factor"].map(fcol).to_numpy(),
        df["month"].map(mcol).to_numpy(),
    ] = vals
    return LoadingPanel(companies, factors, months, values)


def load_mcaps(path, calendar: TradingCalendar) -> MarketCapSeries:
    df = _read_csv(path, ("company", "month", "market_cap"))
    months = calendar.months
    if df.empty:
        return MarketCapSeries((), months, np.empty((0, len(months))))
    vals = _parse_floats(df, "market_cap", path)
    nonpos = np.flatnonzero(vals <= 0)
    if len(nonpos):
        raise ParseError(f"{path}: line {nonpos[0] + 2}: market_cap must be positive")
    _check_duplicates(df, ["company", "month"], path)
    unknown = set(df["month"]) - set(months)
    if unknown:
        raise ParseError(f"{path}: month {sorted(unknown)[0]} is not in the trading calendar")
    companies = tuple(sorted(set(df["company"])))
    row = {c: i for i, c in enumerate(companies)}
    mcol = {m: i for i, m in enumerate(months)}
    values = np.full((len(companies), len(months)), np.nan)
    values[df["company"].map(row).to_numpy(), df["month"].map(mcol).to_numpy()] = vals
    return MarketCapSeries(companies, months, values)


def _align_companies(
    returns: ReturnPanel, loadings: LoadingPanel, mcaps: MarketCapSeries
) -> tuple[ReturnPanel, LoadingPanel, MarketCapSeries]:
    """Expand all three panels onto the union of their company sets."""
    companies = tuple(sorted(set(returns.companies) | set(loadings.companies) | set(mcaps.companies)))

    def expand(rows, old_companies, shape_tail):
        out = np.full((len(companies), *shape_tail), np.nan)
        idx = {c: i for i, c in enumerate(old_companies)}
        for j, c in enumerate(companies):
            if c in idx:
                out[j] = rows[idx[c]]
        return out

    r = ReturnPanel(companies, returns.calendar, expand(returns.values, returns.companies, returns.values.shape[1:]))
    l = LoadingPanel(
        companies, loadings.factors, loadings.months,
        expand(loadings.values, loadings.companies, loadings.values.shape[1:]),
    )
    m = MarketCapSeries(companies, mcaps.months, expand(mcaps.values, mcaps.companies, mcaps.values.shape[1:]))
    return r, l, m


def load_panels(
    returns_file, loadings_file, mcaps_file, calendar: TradingCalendar
) -> tuple[ReturnPanel, LoadingPanel, MarketCapSeries]:
    """Load and align the three input files onto the shared calendar."""
    returns = load_returns(returns_file, calendar)
    loadings = load_loadings(loadings_file, calendar)
    mcaps = load_mcaps(mcaps_file, calendar)
    return _align_companies(returns, loadings, mcaps)


# ---------------------------------------------------------------------------
# CSV export (same schemas the loaders read)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_returns(panel: ReturnPanel, path) -> None:
    days = panel.calendar.day_strings()
    with open(path, "w") as fh:
        fh.write("company,date,log_return\n")
        for i, c in enumerate(panel.companies):
            row = panel.values[i]
            for t in np.flatnonzero(np.isfinite(row)):
                fh.write(f"{c},{days[t]},{_fmt(row[t])}\n")


def write_loadings(panel: LoadingPanel, path, include_market: bool = False) -> None:
    with open(path, "w") as fh:
        fh.write("company,month,factor,value\n")
        for i, c in enumerate(panel.companies):
            for j, f in enumerate(panel.factors.names):
                if f == MARKET_FACTOR and not include_market:
                    continue
                row = panel.values[i, j]
                for m in np.flatnonzero(np.isfinite(row)):
                    fh.write(f"{c},{panel.months[m]},{f},{_fmt(row[m])}\n")


def write_mcaps(series: MarketCapSeries, path) -> None:
    with open(path, "w") as fh:
        fh.write("company,month,market_cap\n")
        for i, c in enumerate(series.companies):
            row = series.values[i]
            for m in np.flatnonzero(np.isfinite(row)):
                fh.write(f"{c},{series.months[m]},{_fmt(row[m])}\n")


# ---------------------------------------------------------------------------
# Preprocessing


def apply_preprocessing(
    loadings: LoadingPanel, mcaps: MarketCapSeries, returns: ReturnPanel
) -> PreprocessResult:
    """Apply the missing-data rules and compute month-level eligibility.

    A company is eligible in a month iff it has at least one registered
    (non-market) loading and at least one registered return that month.
    Missing country/industry loadings are zero-filled for companies with a
    registered loading; style loadings stay missing. Missing market caps of
    eligible companies are replaced by the square of the previous month's
    regression weight (its cap), falling back to the cross-sectional median
    cap; every substitution is flagged in the result metadata.

    Idempotent: applying the result again is a no-op apart from the (then
    empty) substitution metadata.
    """
    if loadings.companies != returns.companies or loadings.companies != mcaps.companies:
        raise ValueError("panels must be aligned on the same company list")
    if loadings.months != mcaps.months:
        raise ValueError("loadings and market caps must cover the same months")

    months = loadings.months
    factors = loadings.factors
    values = loadings.values.copy()
    market_col = factors.index(MARKET_FACTOR)
    non_market = np.ones(len(factors), dtype=bool)
    non_market[market_col] = False

    has_loadings = np.isfinite(values[:, non_market, :]).any(axis=1)  # (companies, months)
    obs = returns.observed_by_month()
    ret_months = {m: i for i, m in enumerate(returns.calendar.months)}
    has_returns = np.zeros((len(loadings.companies), len(months)), dtype=bool)
    for j, m in enumerate(months):
        if m in ret_months:
            has_returns[:, j] = obs[:, ret_months[m]] > 0
    eligible = has_loadings & has_returns

    fill_kinds = factors.kind_mask(KIND_COUNTRY) | factors.kind_mask(KIND_INDUSTRY)
    fillable = np.isnan(values) & fill_kinds[None, :, None] & has_loadings[:, None, :]
    values[fillable] = 0.0
    market = values[:, market_col, :]
    market[has_loadings] = 1.0
    market[~has_loadings] = np.nan

    caps = mcaps.values.copy()
    subs: list[CapSubstitution] = []
    for j, m in enumerate(months):
        need = eligible[:, j] & ~np.isfinite(caps[:, j])
        if not need.any():
            continue
        observed = caps[:, j][np.isfinite(caps[:, j])]
        median = float(np.median(observed)) if len(observed) else np.nan
        for i in np.flatnonzero(need):
            prev = caps[i, j - 1] if j > 0 else np.nan
            if np.isfinite(prev):
                caps[i, j] = prev * prev
                method = "prev_weight_squared"
            elif np.isfinite(median):
                caps[i, j] = median
                method = "cross_sectional_median"
            else:
                continue  # nothing to substitute from; cap stays missing
            subs.append(CapSubstitution(loadings.companies[i], m, float(caps[i, j]), method))

    return PreprocessResult(
        LoadingPanel(loadings.companies, factors, months, values),
        MarketCapSeries(mcaps.companies, months, caps),
        UniverseMask(loadings.companies, months, eligible),
        tuple(subs),
    )


def window_slice(panel: ReturnPanel, end_month: str, q: int) -> ReturnPanel:
    """Restrict a panel to the trading days of the q calendar months ending
    with ``end_month`` (the month immediately before a test period starts)."""
    mask = panel.calendar.window_day_mask(end_month, q)
    return ReturnPanel(panel.companies, panel.calendar.subset(mask), panel.values[:, mask])
