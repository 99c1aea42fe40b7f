import numpy as np
import pytest

from volcast.calendars import TradingCalendar, month_add, month_ordinal, ordinal_month


def test_month_arithmetic_round_trip():
    assert month_add("2013-02", -1) == "2013-01"
    assert month_add("2013-01", -1) == "2012-12"
    assert month_add("2013-02", 96) == "2021-02"
    for m in ("2010-01", "1999-12", "2021-04"):
        assert ordinal_month(month_ordinal(m)) == m


def test_bad_month_ids_rejected():
    with pytest.raises(ValueError):
        month_ordinal("2013/02")
    with pytest.raises(ValueError):
        month_ordinal("2013-13")


def test_business_days_are_weekdays_and_increasing():
    cal = TradingCalendar.business_days("2013-01", 63)
    assert len(cal) == 63
    assert np.all(cal.days[1:] > cal.days[:-1])
    weekday = (cal.days.astype("datetime64[D]").view("int64") + 3) % 7
    assert weekday.max() <= 4
    assert cal.months == ("2013-01", "2013-02", "2013-03")


def test_calendar_rejects_unsorted_days():
    with pytest.raises(ValueError):
        TradingCalendar(np.array(["2013-01-03", "2013-01-02"], dtype="datetime64[D]"))


def test_window_day_mask_counts():
    cal = TradingCalendar.business_days("2013-01", 63)
    jan = cal.window_day_mask("2013-01", 1)
    assert jan.sum() == np.sum(cal.month_of_day == 0)
    both = cal.window_day_mask("2013-02", 2)
    assert both.sum() == np.sum(cal.month_of_day <= 1)


def test_window_out_of_calendar_raises():
    cal = TradingCalendar.business_days("2013-01", 63)
    with pytest.raises(ValueError, match="starts before"):
        cal.window_day_mask("2013-01", 12)
    with pytest.raises(ValueError, match="past the calendar"):
        cal.window_day_mask("2013-09", 1)
