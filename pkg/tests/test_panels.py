import numpy as np
import pytest

from volcast.calendars import TradingCalendar
from volcast.panels import (
    ConflictError,
    FactorSet,
    LoadingPanel,
    MarketCapSeries,
    ParseError,
    ReturnPanel,
    apply_preprocessing,
    load_loadings,
    load_mcaps,
    load_panels,
    load_returns,
    window_slice,
    write_loadings,
    write_mcaps,
    write_returns,
)

from conftest import make_loadings, make_mcaps, make_panel


@pytest.fixture
def five_day_calendar():
    return TradingCalendar.business_days("2013-01", 5)


def test_load_returns_with_one_missing_cell(tmp_path, five_day_calendar):
    days = five_day_calendar.day_strings()
    lines = ["company,date,log_return"]
    for c in ("A", "B", "C"):
        for d in days:
            if (c, d) == ("B", days[2]):
                continue  # the one missing cell
            lines.append(f"{c},{d},0.01")
    path = tmp_path / "returns.csv"
    path.write_text("\n".join(lines) + "\n")
    panel = load_returns(path, five_day_calendar)
    assert panel.companies == ("A", "B", "C")
    assert np.sum(~np.isfinite(panel.values)) == 1
    assert not np.isfinite(panel.values[1, 2])


def test_load_returns_empty_file(tmp_path, five_day_calendar):
    path = tmp_path / "returns.csv"
    path.write_text("company,date,log_return\n")
    panel = load_returns(path, five_day_calendar)
    assert panel.companies == ()
    assert panel.values.shape == (0, 5)


def test_load_returns_unknown_date_names_it(tmp_path, five_day_calendar):
    path = tmp_path / "returns.csv"
    path.write_text("company,date,log_return\nA,2099-01-05,0.01\n")
    with pytest.raises(ParseError, match="2099-01-05"):
        load_returns(path, five_day_calendar)


def test_load_returns_malformed_row_reports_line(tmp_path, five_day_calendar):
    days = five_day_calendar.day_strings()
    path = tmp_path / "returns.csv"
    path.write_text(f"company,date,log_return\nA,{days[0]},0.01\nA,{days[1]},oops\n")
    with pytest.raises(ParseError, match="line 3"):
        load_returns(path, five_day_calendar)


def test_load_returns_duplicate_raises_conflict(tmp_path, five_day_calendar):
    d = five_day_calendar.day_strings()[0]
    path = tmp_path / "returns.csv"
    path.write_text(f"company,date,log_return\nA,{d},0.01\nA,{d},0.02\n")
    with pytest.raises(ConflictError):
        load_returns(path, five_day_calendar)


def test_load_panels_aligns_company_union(tmp_path, five_day_calendar):
    days = five_day_calendar.day_strings()
    (tmp_path / "returns.csv").write_text(f"company,date,log_return\nA,{days[0]},0.01\n")
    (tmp_path / "loadings.csv").write_text("company,month,factor,value\nB,2013-01,style:x,1.0\n")
    (tmp_path / "mcaps.csv").write_text("company,month,market_cap\nA,2013-01,5e9\n")
    returns, loadings, mcaps = load_panels(
        tmp_path / "returns.csv", tmp_path / "loadings.csv", tmp_path / "mcaps.csv", five_day_calendar
    )
    assert returns.companies == loadings.companies == mcaps.companies == ("A", "B")
    assert loadings.factors.names == ("style:x", "market")


def test_load_mcaps_rejects_nonpositive(tmp_path, five_day_calendar):
    path = tmp_path / "mcaps.csv"
    path.write_text("company,month,market_cap\nA,2013-01,-5\n")
    with pytest.raises(ParseError, match="positive"):
        load_mcaps(path, five_day_calendar)


def test_load_loadings_rejects_unknown_factor_kind(tmp_path, five_day_calendar):
    path = tmp_path / "loadings.csv"
    path.write_text("company,month,factor,value\nA,2013-01,sector:tech,1.0\n")
    with pytest.raises(ParseError, match="unknown factor id"):
        load_loadings(path, five_day_calendar)


def test_csv_round_trip(tmp_path):
    cal = TradingCalendar.business_days("2013-01", 8)
    values = np.array([[0.01, np.nan, 0.02, -0.01, 0.0, 0.005, np.nan, 0.03]])
    panel = make_panel(values, cal, ["A"])
    loadings = make_loadings(["A"], ["style:x", "country:US", "market"], cal.months)
    loadings.values[0, loadings.factors.index("style:x"), 0] = 0.5
    loadings.values[0, loadings.factors.index("country:US"), 0] = 1.0
    mcaps = make_mcaps(["A"], cal.months, 3.3e9)

    write_returns(panel, tmp_path / "returns.csv")
    write_loadings(loadings, tmp_path / "loadings.csv")
    write_mcaps(mcaps, tmp_path / "mcaps.csv")
    r2, l2, m2 = load_panels(
        tmp_path / "returns.csv", tmp_path / "loadings.csv", tmp_path / "mcaps.csv", cal
    )
    np.testing.assert_array_equal(r2.values, panel.values)
    assert l2.values[0, l2.factors.index("style:x"), 0] == 0.5
    np.testing.assert_array_equal(m2.values, mcaps.values)


# ---------------------------------------------------------------------------
# preprocessing


def _preprocessing_inputs():
    cal = TradingCalendar.business_days("2013-01", 43)  # Jan + Feb 2013
    months = cal.months
    companies = ("A", "B", "C")
    fs = FactorSet(("style:x", "country:US", "industry:tech", "market"))
    lv = np.full((3, 4, 2), np.nan)
    # A: full loadings both months; B: country both months, style only in
    # January, industry never registered; C: no loadings at all in February
    for m in range(2):
        lv[0, :, m] = (0.5, 1.0, 1.0, np.nan)
    lv[1, fs.index("style:x"), 0] = 0.3
    lv[1, fs.index("country:US"), :] = 1.0
    lv[2, fs.index("style:x"), 0] = -0.2
    lv[2, fs.index("country:US"), 0] = 1.0
    loadings = LoadingPanel(companies, fs, months, lv)

    rv = np.full((3, len(cal)), 0.01)
    rv[1, cal.month_of_day == 0] = np.nan  # B: no returns in January
    returns = ReturnPanel(companies, cal, rv)

    mc = np.full((3, 2), 1e9)
    mc[0, 1] = np.nan  # A: missing cap in Feb -> prev squared
    mc[2, 0] = np.nan  # C: missing cap in Jan -> median fallback
    mcaps = MarketCapSeries(companies, months, mc)
    return loadings, mcaps, returns


def test_preprocessing_zero_fills_country_industry_only():
    loadings, mcaps, returns = _preprocessing_inputs()
    result = apply_preprocessing(loadings, mcaps, returns)
    fs = result.loadings.factors
    # B's missing industry loading in Jan becomes 0
    assert result.loadings.values[1, fs.index("industry:tech"), 0] == 0.0
    # style loadings are never zero-filled
    assert np.isnan(result.loadings.values[0, fs.index("style:x"), 0]) is np.False_
    assert np.isnan(result.loadings.values[1, fs.index("style:x"), 1])
    # C has no loadings in Feb: stays missing entirely
    assert np.isnan(result.loadings.values[2, fs.index("country:US"), 1])
    # market column is 1 exactly where the company registered loadings
    assert result.loadings.values[0, fs.index("market"), 0] == 1.0
    assert np.isnan(result.loadings.values[2, fs.index("market"), 1])


def test_preprocessing_excludes_no_return_and_no_loading_months():
    loadings, mcaps, returns = _preprocessing_inputs()
    result = apply_preprocessing(loadings, mcaps, returns)
    # B has loadings but no returns in January
    assert not result.mask.eligible[1, 0]
    assert result.mask.eligible[1, 1]
    # C has returns but no loadings in February
    assert result.mask.eligible[2, 0]
    assert not result.mask.eligible[2, 1]
    assert result.mask.eligible[0].all()


def test_preprocessing_mask_matches_brute_force():
    loadings, mcaps, returns = _preprocessing_inputs()
    result = apply_preprocessing(loadings, mcaps, returns)
    fs = loadings.factors
    non_market = [i for i, n in enumerate(fs.names) if n != "market"]
    for i in range(len(loadings.companies)):
        for m, month in enumerate(loadings.months):
            has_loading = any(np.isfinite(loadings.values[i, j, m]) for j in non_market)
            day_cols = returns.calendar.month_of_day == m
            has_return = bool(np.isfinite(returns.values[i, day_cols]).any())
            assert result.mask.eligible[i, m] == (has_loading and has_return)


def test_preprocessing_cap_proxies_and_metadata():
    loadings, mcaps, returns = _preprocessing_inputs()
    result = apply_preprocessing(loadings, mcaps, returns)
    subs = {(s.company, s.month): s for s in result.cap_substitutions}
    # A, Feb: previous month's weight squared
    assert subs[("A", "2013-02")].method == "prev_weight_squared"
    assert result.mcaps.values[0, 1] == pytest.approx(1e18)
    # C, Jan: no previous month -> cross-sectional median
    assert subs[("C", "2013-01")].method == "cross_sectional_median"
    assert result.mcaps.values[2, 0] == pytest.approx(1e9)


def test_preprocessing_is_idempotent():
    loadings, mcaps, returns = _preprocessing_inputs()
    first = apply_preprocessing(loadings, mcaps, returns)
    second = apply_preprocessing(first.loadings, first.mcaps, returns)
    np.testing.assert_array_equal(first.loadings.values, second.loadings.values)
    np.testing.assert_array_equal(first.mcaps.values, second.mcaps.values)
    np.testing.assert_array_equal(first.mask.eligible, second.mask.eligible)
    assert second.cap_substitutions == ()


def test_preprocessing_noop_on_fully_observed_panel():
    cal = TradingCalendar.business_days("2013-01", 22)
    companies = ("A", "B")
    loadings = make_loadings(companies, ["style:x", "market"], cal.months, fill=0.7)
    returns = make_panel(np.full((2, 22), 0.01), cal, companies)
    mcaps = make_mcaps(companies, cal.months)
    result = apply_preprocessing(loadings, mcaps, returns)
    assert result.mask.eligible.all()
    assert result.cap_substitutions == ()
    np.testing.assert_array_equal(result.mcaps.values, mcaps.values)
    style = result.loadings.factors.index("style:x")
    np.testing.assert_array_equal(result.loadings.values[:, style, :], loadings.values[:, style, :])


# ---------------------------------------------------------------------------
# window slicing


def test_window_slice_takes_month_before_test_period():
    cal = TradingCalendar.business_days("2013-01", 63)  # Jan-Mar
    panel = make_panel(np.arange(2 * 63, dtype=float).reshape(2, 63), cal)
    window = window_slice(panel, "2013-01", 1)  # test period starting Feb
    assert window.calendar.months == ("2013-01",)
    assert len(window.calendar) == int(np.sum(cal.month_of_day == 0))


def test_window_slice_off_calendar_raises():
    cal = TradingCalendar.business_days("2013-01", 63)
    panel = make_panel(np.zeros((1, 63)), cal)
    with pytest.raises(ValueError):
        window_slice(panel, "2013-01", 12)


def test_window_slice_length_is_sum_of_month_day_counts():
    cal = TradingCalendar.business_days("2013-01", 63)
    panel = make_panel(np.zeros((1, 63)), cal)
    window = window_slice(panel, "2013-03", 3)
    expected = sum(int(np.sum(cal.month_of_day == m)) for m in range(3))
    assert len(window.calendar) == expected == 63


def test_window_slice_nesting():
    cal = TradingCalendar.business_days("2013-01", 63)
    panel = make_panel(np.zeros((1, 63)), cal)
    days_q1 = set(window_slice(panel, "2013-03", 1).calendar.day_strings())
    days_q2 = set(window_slice(panel, "2013-03", 2).calendar.day_strings())
    days_q3 = set(window_slice(panel, "2013-03", 3).calendar.day_strings())
    assert days_q1 <= days_q2 <= days_q3
