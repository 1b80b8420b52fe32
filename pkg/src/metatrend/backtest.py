"""Signal-driven portfolio backtest.

Buy when a stock's predicted label is "rise"; hold nothing else. Each
trading day, at that day's close: stocks whose signal left the buy set (or
went missing) are sold, and all capital is redistributed equally across the
day's buy-signaled stocks, netting rebalance trades per stock. Trades cost
nothing and fractional shares are allowed, so rebalancing conserves value at
the rebalance instant.
"""

import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from metatrend.errors import PipelineError
from metatrend.ioutil import write_csv
from metatrend.labeling import TrendLabel
from metatrend.market_data import Universe

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BacktestConfig:
    initial_capital: float = 1.0
    buy_signals: frozenset[TrendLabel] = frozenset({TrendLabel.RISE})
    sell_signals: frozenset[TrendLabel] = frozenset(
        {TrendLabel.RISE_PLUS, TrendLabel.FALL, TrendLabel.FALL_PLUS}
    )

    def __post_init__(self):
        if self.initial_capital <= 0:
            raise PipelineError("initial capital must be positive")
        if self.buy_signals & self.sell_signals:
            raise PipelineError("buy and sell signal sets overlap")


@dataclass(frozen=True)
class Trade:
    date: date
    stock_id: str
    side: str          # "buy" | "sell"
    shares: float
    price: float


@dataclass(frozen=True)
class EquityCurve:
    points: tuple[tuple[date, float], ...]

    def __post_init__(self):
        for (d1, v1), (d2, v2) in zip(self.points, self.points[1:]):
            if d2 <= d1:
                raise PipelineError("equity dates not strictly increasing")
        if any(v <= 0 for _, v in self.points):
            raise PipelineError("non-positive equity value")

    @property
    def initial(self) -> float:
        return self.points[0][1]

    @property
    def final(self) -> float:
        return self.points[-1][1]


def cumulative_return(curve: EquityCurve) -> float:
    return curve.final / curve.initial - 1.0


def yearly_returns(curve: EquityCurve) -> dict[int, float]:
    """Per-calendar-year growth of the curve (last value of each year over
    the last value of the previous year)."""
    last_by_year: dict[int, float] = {}
    for day, value in curve.points:
        last_by_year[day.year] = value
    out = {}
    prev = curve.initial
    for year in sorted(last_by_year):
        out[year] = last_by_year[year] / prev - 1.0
        prev = last_by_year[year]
    return out


def run_backtest(records, universe: Universe,
                 cfg: BacktestConfig | None = None) -> tuple[EquityCurve, list[Trade]]:
    """Replay prediction signals over the universe calendar.

    The day loop covers every calendar day between the first and last record
    date. A held stock with no record that day counts as a sell signal.
    """
    cfg = cfg or BacktestConfig()
    if not records:
        raise PipelineError("no prediction records to backtest")
    signals: dict[date, dict[str, TrendLabel]] = {}
    for r in records:
        day_map = signals.setdefault(r.date, {})
        if day_map.get(r.stock_id, r.predicted) != r.predicted:
            raise PipelineError(
                f"conflicting signals for {r.stock_id} on {r.date}"
            )
        day_map[r.stock_id] = r.predicted
    first = min(signals)
    last = max(signals)
    days = [d for d in universe.calendar if first <= d <= last]
    if not days:
        raise PipelineError("no universe calendar days overlap the records")

    def close(stock_id: str, day: date) -> float:
        try:
            return universe.close(stock_id, day)
        except KeyError:
            raise PipelineError(f"no price for {stock_id} on {day}") from None

    cash = cfg.initial_capital
    holdings: dict[str, float] = {}
    trades: list[Trade] = []
    points: list[tuple[date, float]] = []
    for day in days:
        day_signals = signals.get(day, {})
        buys = sorted(
            sid for sid, lab in day_signals.items() if lab in cfg.buy_signals
        )
        # Liquidate holdings whose signal left the buy set or went missing.
        for sid in sorted(holdings):
            if sid not in buys:
                price = close(sid, day)
                shares = holdings.pop(sid)
                cash += shares * price
                trades.append(Trade(day, sid, "sell", shares, price))
        prices = {sid: close(sid, day) for sid in set(buys) | set(holdings)}
        equity = cash + sum(sh * prices[sid] for sid, sh in holdings.items())
        if buys:
            target_value = equity / len(buys)
            for sid in buys:
                price = prices[sid]
                target_shares = target_value / price
                delta = target_shares - holdings.get(sid, 0.0)
                if delta > 0:
                    trades.append(Trade(day, sid, "buy", delta, price))
                elif delta < 0:
                    trades.append(Trade(day, sid, "sell", -delta, price))
                cash -= delta * price
                holdings[sid] = target_shares
        # Mark to market; same closes as the trades, so rebalancing itself
        # cannot change this value.
        total = cash + sum(sh * prices[sid] for sid, sh in holdings.items())
        if cash < -1e-9 * cfg.initial_capital:
            raise PipelineError(f"negative cash {cash} on {day}")
        cash = max(cash, 0.0)
        points.append((day, total))
    return EquityCurve(tuple(points)), trades


def write_equity_csv(curve: EquityCurve, path: str | Path,
                     config_hash: str | None = None) -> None:
    rows = [(day.isoformat(), repr(value)) for day, value in curve.points]
    write_csv(Path(path), ["date", "total_value"], rows, config_hash=config_hash)


def write_trades_csv(trades: list[Trade], path: str | Path,
                     config_hash: str | None = None) -> None:
    rows = [
        (t.date.isoformat(), t.stock_id, t.side, repr(t.shares), repr(t.price))
        for t in trades
    ]
    write_csv(Path(path), ["date", "stock_id", "side", "shares", "price"],
              rows, config_hash=config_hash)
