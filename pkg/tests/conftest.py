"""Shared builders for test series and universes."""

from datetime import date, timedelta

import numpy as np
import pytest

from metatrend.market_data import Bar, PriceSeries


def trading_days(count: int, start: date = date(2015, 1, 1)) -> list[date]:
    days = []
    day = start
    while len(days) < count:
        if day.weekday() < 5:
            days.append(day)
        day += timedelta(days=1)
    return days


def series_from_closes(closes, stock_id: str = "TEST",
                       start: date = date(2015, 1, 1),
                       flat_bars: bool = False) -> PriceSeries:
    """Build a valid series around the given closes.

    ``flat_bars`` collapses open/high/low onto the close, which makes
    range-based indicators degenerate on purpose.
    """
    closes = [float(c) for c in closes]
    days = trading_days(len(closes), start)
    bars = []
    prev = closes[0]
    for day, close in zip(days, closes):
        if flat_bars:
            bars.append(Bar(day, close, close, close, close, 1000.0))
        else:
            open_ = prev
            high = max(open_, close) * 1.004
            low = min(open_, close) * 0.996
            bars.append(Bar(day, open_, high, low, close, 1000.0))
        prev = close
    return PriceSeries(stock_id, tuple(bars))


def random_walk_closes(n: int, seed: int, start_price: float = 100.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0003, 0.02, size=n - 1)
    return start_price * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))


@pytest.fixture
def random_series():
    def make(n: int = 120, seed: int = 0, stock_id: str = "RW") -> PriceSeries:
        return series_from_closes(random_walk_closes(n, seed), stock_id)

    return make
