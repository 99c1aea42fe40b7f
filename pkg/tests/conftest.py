import numpy as np
import pytest

from volcast.calendars import TradingCalendar
from volcast.panels import FactorSet, LoadingPanel, MarketCapSeries, ReturnPanel


@pytest.fixture
def small_calendar():
    # Jan-Mar 2013 weekdays: 22 + 20 + 21 trading days
    return TradingCalendar.business_days("2013-01", 63)


def make_panel(values, calendar=None, companies=None):
    values = np.asarray(values, dtype=float)
    if calendar is None:
        calendar = TradingCalendar.business_days("2013-01", values.shape[1])
    if companies is None:
        companies = tuple(f"C{i + 1:02d}" for i in range(values.shape[0]))
    return ReturnPanel(tuple(companies), calendar, values)


def make_loadings(companies, factor_names, months, fill=None):
    fs = FactorSet(tuple(factor_names))
    values = np.full((len(companies), len(fs), len(months)), np.nan)
    if fill is not None:
        values[:] = fill
    return LoadingPanel(tuple(companies), fs, tuple(months), values)


def make_mcaps(companies, months, value=1e9):
    values = np.full((len(companies), len(months)), float(value))
    return MarketCapSeries(tuple(companies), tuple(months), values)
