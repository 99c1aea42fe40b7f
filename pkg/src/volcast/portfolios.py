"""Factor-based portfolio construction and random resampling.

Per test period, portfolios are built from the loadings and market caps of
the last month before the period starts. Long portfolios keep companies
with a positive basis loading, long/short (market-neutral) portfolios keep
companies with a nonzero style loading; both apply a minimum-cap filter and
keep at most the 300 largest caps. Weights are proportional to the basis
loading, scaled so absolute weights sum to 1 (and, for long/short, so each
side carries half the gross weight, making the net weight 0).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .panels import (
    KIND_COUNTRY,
    LoadingPanel,
    MarketCapSeries,
    UniverseMask,
    country_code,
    factor_kind,
)

KIND_LONG = "long"
KIND_LONG_SHORT = "long_short"
ORIGIN_ORIGINAL = "original"
ORIGIN_RANDOM = "random"
MC_BASIS = "mc"

SCOPE_UNRESTRICTED = "unrestricted"
SCOPE_REGION = "region"
SCOPE_SUBREGION = "subregion"


@dataclass(frozen=True)
class Restriction:
    scope: str = SCOPE_UNRESTRICTED
    name: str | None = None

    @property
    def label(self) -> str:
        if self.scope == SCOPE_UNRESTRICTED:
            return SCOPE_UNRESTRICTED
        return f"{self.scope}={self.name}"

    @classmethod
    def parse(cls, label: str) -> "Restriction":
        if label == SCOPE_UNRESTRICTED:
            return cls()
        scope, _, name = label.partition("=")
        if scope not in (SCOPE_REGION, SCOPE_SUBREGION) or not name:
            raise ValueError(f"bad restriction label {label!r}")
        return cls(scope, name)


UNRESTRICTED = Restriction()


@dataclass(frozen=True)
class RegionMap:
    """Country -> (region, subregion) association from ISO 3166 codes."""

    regions: dict[str, str]
    subregions: dict[str, str]

    @classmethod
    def from_rows(cls, rows) -> "RegionMap":
        regions, subregions = {}, {}
        for country, region, subregion in rows:
            if country in regions:
                raise ValueError(f"country {country!r} mapped twice")
            regions[country] = region
            if subregion:
                subregions[country] = subregion
        return cls(regions, subregions)

    @classmethod
    def from_csv(cls, path) -> "RegionMap":
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "country,region,subregion":
                raise ValueError(f"{path}: expected header country,region,subregion")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise ValueError(f"{path}: bad row {line!r}")
                rows.append(tuple(parts))
        return cls.from_rows(rows)

    @classmethod
    def default(cls) -> "RegionMap":
        with resources.files("volcast.data").joinpath("regions.csv").open() as fh:
            header = fh.readline()
            rows = [tuple(line.strip().split(",")) for line in fh if line.strip()]
        return cls.from_rows(rows)

    @property
    def region_names(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.regions.values())))

    @property
    def subregion_names(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.subregions.values())))

    def countries_in(self, restriction: Restriction) -> tuple[str, ...]:
        if restriction.scope == SCOPE_REGION:
            table = self.regions
        elif restriction.scope == SCOPE_SUBREGION:
            table = self.subregions
        else:
            raise ValueError("unrestricted scope has no country list")
        return tuple(sorted(c for c, v in table.items() if v == restriction.name))


@dataclass(frozen=True)
class PortfolioRules:
    min_cap: float = 2e8
    min_members: int = 40
    max_members: int = 300
    min_side: int = 20
    resample_draws: int = 50


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Weighted company set for one test period."""

    id: str
    kind: str  # long | long_short
    restriction: Restriction
    basis: str  # factor id or "mc"
    origin: str  # original | random
    period_start: str  # month id of the test period's first month
    companies: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.companies),):
            raise ValueError("weights must align with companies")
        object.__setattr__(self, "weights", w)

    @property
    def members(self) -> list[tuple[str, float]]:
        return list(zip(self.companies, map(float, self.weights)))

    def violations(self, rules: PortfolioRules = PortfolioRules()) -> list[str]:
        out = []
        w = self.weights
        if abs(np.sum(np.abs(w)) - 1.0) > 1e-12:
            out.append(f"{self.id}: absolute weights sum to {np.sum(np.abs(w))!r}, not 1")
        if self.kind == KIND_LONG and np.any(w <= 0):
            out.append(f"{self.id}: long portfolio has non-positive weights")
        if self.kind == KIND_LONG_SHORT:
            if abs(np.sum(w)) > 1e-12:
                out.append(f"{self.id}: net weight {np.sum(w)!r} is not 0")
            if self.origin == ORIGIN_ORIGINAL:
                pos, neg = int(np.sum(w > 0)), int(np.sum(w < 0))
                if pos < rules.min_side or neg < rules.min_side:
                    out.append(f"{self.id}: side counts {pos}/{neg} below {rules.min_side}")
        if self.origin == ORIGIN_ORIGINAL:
            if not rules.min_members <= len(self.companies) <= rules.max_members:
                out.append(f"{self.id}: size {len(self.companies)} outside "
                           f"[{rules.min_members}, {rules.max_members}]")
        return out

    def validate(self, rules: PortfolioRules = PortfolioRules()) -> None:
        problems = self.violations(rules)
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class SkipRecord:
    portfolio_id: str
    period_start: str
    reason: str


def _region_filter(
    restriction: Restriction,
    region_map: RegionMap | None,
    loadings_month: np.ndarray,
    factor_names: tuple[str, ...],
) -> np.ndarray:
    """Companies with a positive country loading for a country in scope."""
    n = loadings_month.shape[0]
    if restriction.scope == SCOPE_UNRESTRICTED:
        return np.ones(n, dtype=bool)
    if region_map is None:
        raise ValueError("region-restricted portfolios need a region map")
    wanted = set(region_map.countries_in(restriction))
    cols = [
        i
        for i, name in enumerate(factor_names)
        if factor_kind(name) == KIND_COUNTRY and country_code(name) in wanted
    ]
    if not cols:
        return np.zeros(n, dtype=bool)
    block = loadings_month[:, cols]
    return np.nansum(np.where(np.isfinite(block) & (block > 0), 1, 0), axis=1) > 0


def _select_top_caps(candidates: np.ndarray, caps: np.ndarray, companies, max_members: int) -> np.ndarray:
    idx = np.flatnonzero(candidates)
    if len(idx) <= max_members:
        return idx
    # deterministic: larger cap first, company id as tiebreak
    order = sorted(idx, key=lambda i: (-caps[i], companies[i]))
    return np.array(order[:max_members], dtype=np.intp)


def build_long(
    companies: tuple[str, ...],
    basis_values: np.ndarray,
    caps: np.ndarray,
    loadings_month: np.ndarray,
    factor_names: tuple[str, ...],
    basis: str,
    restriction: Restriction,
    period_start: str,
    region_map: RegionMap | None = None,
    rules: PortfolioRules = PortfolioRules(),
    eligible: np.ndarray | None = None,
) -> Portfolio | None:
    """Long portfolio: positive basis loading, cap filter, top caps, weights
    proportional to the loading. Returns None when fewer than the minimum
    number of companies survive."""
    ok = np.isfinite(basis_values) & (basis_values > 0)
    ok &= np.isfinite(caps) & (caps >= rules.min_cap)
    if eligible is not None:
        ok &= eligible
    ok &= _region_filter(restriction, region_map, loadings_month, factor_names)
    idx = _select_top_caps(ok, caps, companies, rules.max_members)
    if len(idx) < rules.min_members:
        return None
    values = basis_values[idx]
    weights = values / np.sum(values)
    return Portfolio(
        id=f"{KIND_LONG}|{restriction.label}|{basis}",
        kind=KIND_LONG,
        restriction=restriction,
        basis=basis,
        origin=ORIGIN_ORIGINAL,
        period_start=period_start,
        companies=tuple(companies[i] for i in idx),
        weights=weights,
    )


def _two_sided_weights(values: np.ndarray) -> np.ndarray:
    """Scale each side to carry gross weight 0.5: net 0, gross 1."""
    w = values.astype(float).copy()
    pos, neg = w > 0, w < 0
    w[pos] = 0.5 * w[pos] / np.sum(w[pos])
    w[neg] = -0.5 * w[neg] / np.sum(w[neg])
    return w


def build_long_short(
    companies: tuple[str, ...],
    style_values: np.ndarray,
    caps: np.ndarray,
    loadings_month: np.ndarray,
    factor_names: tuple[str, ...],
    basis: str,
    restriction: Restriction,
    period_start: str,
    region_map: RegionMap | None = None,
    rules: PortfolioRules = PortfolioRules(),
    eligible: np.ndarray | None = None,
) -> Portfolio | None:
    """Market-neutral portfolio on a style basis: nonzero loading, cap
    filter, top caps, signed weights with each side normalized to 0.5.
    Returns None when either side has fewer than the minimum count."""
    ok = np.isfinite(style_values) & (style_values != 0)
    ok &= np.isfinite(caps) & (caps >= rules.min_cap)
    if eligible is not None:
        ok &= eligible
    ok &= _region_filter(restriction, region_map, loadings_month, factor_names)
    idx = _select_top_caps(ok, caps, companies, rules.max_members)
    values = style_values[idx] if len(idx) else np.empty(0)
    if int(np.sum(values > 0)) < rules.min_side or int(np.sum(values < 0)) < rules.min_side:
        return None
    return Portfolio(
        id=f"{KIND_LONG_SHORT}|{restriction.label}|{basis}",
        kind=KIND_LONG_SHORT,
        restriction=restriction,
        basis=basis,
        origin=ORIGIN_ORIGINAL,
        period_start=period_start,
        companies=tuple(companies[i] for i in idx),
        weights=_two_sided_weights(values),
    )


def _stable_seed(*parts) -> np.random.SeedSequence:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:8], "big"))


def resample_random(
    portfolio: Portfolio, seed, draws: int = 50, suffix: str = "rand"
) -> Portfolio:
    """Random portfolio: ``draws`` companies sampled with replacement using
    |w| as sampling weights. Duplicate draws merge by summing their (signed)
    weights; the result is renormalized, and for long/short portfolios the
    sides are rebalanced to net zero first."""
    rng = np.random.default_rng(seed)
    probs = np.abs(portfolio.weights)
    probs = probs / probs.sum()
    n = len(portfolio.companies)
    for _ in range(100):
        counts = np.bincount(rng.choice(n, size=draws, replace=True, p=probs), minlength=n)
        picked = counts > 0
        merged = counts[picked] * portfolio.weights[picked]
        if portfolio.kind != KIND_LONG_SHORT:
            break
        if np.any(merged > 0) and np.any(merged < 0):
            break
    else:
        raise RuntimeError(f"{portfolio.id}: could not draw a two-sided resample")
    if portfolio.kind == KIND_LONG_SHORT:
        weights = _two_sided_weights(merged)
    else:
        weights = merged / np.sum(np.abs(merged))
    return Portfolio(
        id=f"{portfolio.id}|{suffix}",
        kind=portfolio.kind,
        restriction=portfolio.restriction,
        basis=portfolio.basis,
        origin=ORIGIN_RANDOM,
        period_start=portfolio.period_start,
        companies=tuple(c for c, p in zip(portfolio.companies, picked) if p),
        weights=weights,
    )


def build_universe_of_portfolios(
    loadings: LoadingPanel,
    mcaps: MarketCapSeries,
    mask: UniverseMask,
    region_map: RegionMap,
    period_start: str,
    rules: PortfolioRules = PortfolioRules(),
    resamples: int = 2,
    seed: int = 0,
) -> tuple[list[Portfolio], list[SkipRecord]]:
    """The full portfolio family for one test period.

    Long unrestricted portfolios over every country, industry and style
    factor plus market cap; long/short unrestricted over the styles; long
    (styles + mc) and long/short (styles) families per region and per
    subregion. Each surviving original gets ``resamples`` random resamples.
    Skipped portfolios (too small, one-sided) are recorded, not raised.
    """
    from .calendars import month_add

    month = month_add(period_start, -1)
    factors = loadings.factors
    lmat = loadings.month_matrix(month)
    caps = mcaps.month_vector(month)
    eligible = mask.month_vector(month)
    companies = loadings.companies

    def basis_values(basis: str) -> np.ndarray:
        if basis == MC_BASIS:
            return caps
        return lmat[:, factors.index(basis)]

    long_bases = list(factors.countries) + list(factors.industries) + list(factors.styles) + [MC_BASIS]
    style_bases = list(factors.styles)
    restrictions = [UNRESTRICTED]
    restrictions += [Restriction(SCOPE_REGION, r) for r in region_map.region_names]
    restrictions += [Restriction(SCOPE_SUBREGION, s) for s in region_map.subregion_names]

    portfolios: list[Portfolio] = []
    skips: list[SkipRecord] = []

    def attempt(builder, basis, restriction, kind):
        built = builder(
            companies,
            basis_values(basis),
            caps,
            lmat,
            factors.names,
            basis,
            restriction,
            period_start,
            region_map=region_map,
            rules=rules,
            eligible=eligible,
        )
        if built is None:
            skips.append(
                SkipRecord(f"{kind}|{restriction.label}|{basis}", period_start, "too few members")
            )
        else:
            portfolios.append(built)

    for restriction in restrictions:
        long_list = long_bases if restriction.scope == SCOPE_UNRESTRICTED else style_bases + [MC_BASIS]
        for basis in long_list:
            attempt(build_long, basis, restriction, KIND_LONG)
        for basis in style_bases:
            attempt(build_long_short, basis, restriction, KIND_LONG_SHORT)

    randoms = []
    for p in portfolios:
        for k in range(1, resamples + 1):
            sub_seed = _stable_seed(seed, p.id, period_start, k)
            randoms.append(resample_random(p, sub_seed, draws=rules.resample_draws, suffix=f"rand{k}"))
    portfolios.extend(randoms)
    return portfolios, skips


def write_portfolios(portfolios, path) -> None:
    with open(path, "w") as fh:
        fh.write("portfolio_id,period,company,weight\n")
        for p in portfolios:
            for c, w in zip(p.companies, p.weights):
                fh.write(f"{p.id},{p.period_start},{c},{w!r}\n")
