"""Trading calendar shared by all panels.

The calendar is the union of all trading days seen in the data; a company
that did not trade on a day simply has a missing cell there. Months are
identified by "YYYY-MM" strings and ordered by the usual month arithmetic,
so month windows can be computed without assuming the calendar is gap-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def month_ordinal(month: str) -> int:
    """Map a "YYYY-MM" month id to a global ordinal (Jan 0001 = 12)."""
    try:
        year, mon = month.split("-")
        y, m = int(year), int(mon)
    except ValueError as exc:
        raise ValueError(f"bad month id {month!r}, expected YYYY-MM") from exc
    if not 1 <= m <= 12:
        raise ValueError(f"bad month id {month!r}, month out of range")
    return y * 12 + (m - 1)


def ordinal_month(ordinal: int) -> str:
    return f"{ordinal // 12:04d}-{ordinal % 12 + 1:02d}"


def month_add(month: str, k: int) -> str:
    """Shift a "YYYY-MM" id by k calendar months."""
    return ordinal_month(month_ordinal(month) + k)


def month_of_date(day: np.datetime64) -> str:
    return str(np.datetime64(day, "M"))


@dataclass(frozen=True)
class TradingCalendar:
    """Strictly increasing trading days plus their month ids."""

    days: np.ndarray  # datetime64[D], strictly increasing
    months: tuple[str, ...] = field(init=False)
    month_of_day: np.ndarray = field(init=False)  # index into months, per day

    def __post_init__(self):
        days = np.asarray(self.days, dtype="datetime64[D]")
        if days.ndim != 1:
            raise ValueError("calendar days must be one-dimensional")
        if len(days) > 1 and not np.all(days[1:] > days[:-1]):
            raise ValueError("calendar days must be strictly increasing")
        object.__setattr__(self, "days", days)
        month_ids = days.astype("datetime64[M]").astype(str)
        months = tuple(dict.fromkeys(month_ids))
        lookup = {m: i for i, m in enumerate(months)}
        object.__setattr__(self, "months", months)
        object.__setattr__(
            self, "month_of_day", np.array([lookup[m] for m in month_ids], dtype=np.intp)
        )

    def __len__(self) -> int:
        return len(self.days)

    @classmethod
    def from_strings(cls, dates) -> "TradingCalendar":
        return cls(np.array(sorted(set(dates)), dtype="datetime64[D]"))

    @classmethod
    def business_days(cls, start_month: str, n_days: int) -> "TradingCalendar":
        """Weekday calendar starting at the first weekday of ``start_month``."""
        start = np.datetime64(start_month, "D")
        days = np.arange(start, start + int(n_days * 2) + 7, dtype="datetime64[D]")
        weekday = (days.astype("datetime64[D]").view("int64") - 4) % 7
        days = days[weekday < 5][:n_days]
        return cls(days)

    def month_index(self, month: str) -> int:
        try:
            return self.months.index(month)
        except ValueError:
            raise KeyError(f"month {month!r} not in calendar") from None

    def has_month(self, month: str) -> bool:
        return month in self.months

    def day_mask_for_months(self, first_month: str, last_month: str) -> np.ndarray:
        """Boolean day mask covering calendar months first..last inclusive."""
        lo, hi = month_ordinal(first_month), month_ordinal(last_month)
        if lo > hi:
            raise ValueError(f"empty month range {first_month}..{last_month}")
        ords = np.array([month_ordinal(m) for m in self.months])
        keep = (ords >= lo) & (ords <= hi)
        return keep[self.month_of_day]

    def window_day_mask(self, end_month: str, q: int) -> np.ndarray:
        """Days of the q calendar months ending with ``end_month``.

        Raises ValueError when the window would extend past either end of
        the calendar.
        """
        if q < 1:
            raise ValueError(f"window length must be >= 1, got {q}")
        first = month_add(end_month, -(q - 1))
        if month_ordinal(end_month) > month_ordinal(self.months[-1]):
            raise ValueError(f"window end {end_month} is past the calendar end {self.months[-1]}")
        if month_ordinal(first) < month_ordinal(self.months[0]):
            raise ValueError(
                f"window {first}..{end_month} starts before the calendar begins ({self.months[0]})"
            )
        return self.day_mask_for_months(first, end_month)

    def subset(self, day_mask: np.ndarray) -> "TradingCalendar":
        return TradingCalendar(self.days[day_mask])

    def day_strings(self) -> list[str]:
        return [str(d) for d in self.days]
