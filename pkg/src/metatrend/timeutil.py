"""Calendar-month arithmetic shared by dataset slicing and sliding windows."""

from dataclasses import dataclass
from datetime import date


@dataclass(frozen=True, order=True)
class DateRange:
    """Half-open date interval [start, end)."""

    start: date
    end: date

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty date range {self.start}..{self.end}")

    def __contains__(self, day: date) -> bool:
        return self.start <= day < self.end

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


def month_index(day: date) -> int:
    return day.year * 12 + (day.month - 1)


def month_start(index: int) -> date:
    return date(index // 12, index % 12 + 1, 1)


def add_months(day: date, months: int) -> date:
    """First day of the month ``months`` after the month containing ``day``."""
    return month_start(month_index(day) + months)


def month_range(index: int) -> DateRange:
    """The calendar month with the given absolute index, as a DateRange."""
    return DateRange(month_start(index), month_start(index + 1))


def months_between(start: date, end: date) -> int:
    """Number of calendar months touched by [start, end], inclusive."""
    return month_index(end) - month_index(start) + 1
