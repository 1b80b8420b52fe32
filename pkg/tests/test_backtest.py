from datetime import date

import numpy as np
import pytest

from metatrend.backtest import (
    BacktestConfig,
    EquityCurve,
    cumulative_return,
    run_backtest,
    yearly_returns,
)
from metatrend.errors import PipelineError
from metatrend.finetune import PredictionRecord
from metatrend.labeling import TrendLabel
from metatrend.market_data import build_universe
from tests.conftest import series_from_closes, trading_days


def make_universe(close_map: dict[str, list[float]]):
    series = [series_from_closes(closes, sid) for sid, closes in close_map.items()]
    return build_universe(series, "intersect")


def signal(sid, day, label):
    probs = [0.0, 0.0, 0.0, 0.0]
    probs[int(label)] = 1.0
    return PredictionRecord(sid, day, label, label, tuple(probs))


def test_single_stock_plus_ten_percent():
    days = trading_days(3)
    universe = make_universe({"A": [100.0, 100.0, 110.0]})
    records = [
        signal("A", days[1], TrendLabel.RISE),
        signal("A", days[2], TrendLabel.FALL),
    ]
    curve, trades = run_backtest(records, universe)
    assert curve.points[0][1] == pytest.approx(1.0)       # bought at 100
    assert curve.points[-1][1] == pytest.approx(1.10)     # sold at 110
    assert cumulative_return(curve) == pytest.approx(0.10)
    assert [t.side for t in trades] == ["buy", "sell"]
    assert trades[0].price == 100.0 and trades[1].price == 110.0


def test_all_cash_run_is_exactly_flat():
    days = trading_days(5)
    universe = make_universe({"A": [100, 101, 99, 102, 100]})
    records = [signal("A", d, TrendLabel.FALL) for d in days]
    curve, trades = run_backtest(records, universe)
    assert trades == []
    assert all(v == 1.0 for _, v in curve.points)
    assert cumulative_return(curve) == 0.0


def test_two_stocks_equal_prices_split_evenly():
    days = trading_days(4)
    universe = make_universe({"A": [50.0] * 4, "B": [50.0] * 4})
    records = [signal(s, d, TrendLabel.RISE) for s in ("A", "B") for d in days]
    curve, trades = run_backtest(records, universe)
    buys = [t for t in trades if t.side == "buy"]
    assert len(buys) == 2
    assert buys[0].shares == pytest.approx(buys[1].shares)
    assert buys[0].shares == pytest.approx(0.5 / 50.0)
    assert all(v == pytest.approx(1.0) for _, v in curve.points)


def naive_accounting(records, closes, cfg):
    """Straight-loop accounting oracle with explicit dict bookkeeping."""
    sig = {}
    for r in records:
        sig.setdefault(r.date, {})[r.stock_id] = r.predicted
    days = sorted({d for d in closes[next(iter(closes))]})
    first = min(sig)
    last = max(sig)
    days = [d for d in days if first <= d <= last]
    cash = cfg.initial_capital
    held = {}
    values = []
    for day in days:
        today = sig.get(day, {})
        buys = sorted(s for s, lab in today.items() if lab in cfg.buy_signals)
        for s in list(held):
            if s not in buys:
                cash += held.pop(s) * closes[s][day]
        equity = cash + sum(n * closes[s][day] for s, n in held.items())
        if buys:
            per = equity / len(buys)
            new_held = {}
            for s in buys:
                new_held[s] = per / closes[s][day]
            held = new_held
            cash = equity - sum(n * closes[s][day] for s, n in held.items())
        values.append((day, cash + sum(n * closes[s][day] for s, n in held.items())))
    return values


def test_random_scenario_matches_straight_loop_oracle():
    rng = np.random.default_rng(7)
    n_days, n_stocks = 20, 5
    days = trading_days(n_days)
    close_map = {}
    for i in range(n_stocks):
        walk = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=n_days)))
        close_map[f"S{i}"] = list(walk)
    universe = make_universe(close_map)
    labels = list(TrendLabel)
    records = []
    for d_idx, day in enumerate(days):
        for i in range(n_stocks):
            if rng.random() < 0.9:  # occasional missing signal
                records.append(signal(f"S{i}", day, labels[rng.integers(0, 4)]))
    curve, trades = run_backtest(records, universe)

    closes = {
        sid: {b.date: b.close for b in universe.series[sid].bars}
        for sid in universe.stock_ids
    }
    oracle = naive_accounting(records, closes, BacktestConfig())
    assert len(oracle) == len(curve.points)
    for (d1, v1), (d2, v2) in zip(curve.points, oracle):
        assert d1 == d2
        assert v1 == pytest.approx(v2, rel=1e-9)

    # value conservation: replay the trade log day by day
    cash = 1.0
    held: dict[str, float] = {}
    trades_by_day: dict[date, list] = {}
    for t in trades:
        trades_by_day.setdefault(t.date, []).append(t)
    for day, total in curve.points:
        pre_equity = cash + sum(n * closes[s][day] for s, n in held.items())
        for t in trades_by_day.get(day, []):
            if t.side == "sell":
                held[t.stock_id] = held.get(t.stock_id, 0.0) - t.shares
                cash += t.shares * t.price
                if abs(held[t.stock_id]) < 1e-12:
                    held.pop(t.stock_id)
            else:
                held[t.stock_id] = held.get(t.stock_id, 0.0) + t.shares
                cash -= t.shares * t.price
        post_equity = cash + sum(n * closes[s][day] for s, n in held.items())
        assert post_equity == pytest.approx(pre_equity, rel=1e-9)  # conservation
        assert post_equity == pytest.approx(total, rel=1e-9)
        assert cash >= -1e-9

    # determinism
    curve2, trades2 = run_backtest(records, universe)
    assert curve2 == curve and trades2 == trades


def test_missing_price_is_hard_error():
    days = trading_days(3)
    universe = make_universe({"A": [100, 100, 100]})
    records = [signal("B", days[0], TrendLabel.RISE)]
    with pytest.raises(PipelineError, match="no price"):
        run_backtest(records, universe)


def test_overlapping_signal_sets_rejected():
    with pytest.raises(PipelineError, match="overlap"):
        BacktestConfig(buy_signals=frozenset({TrendLabel.RISE}),
                       sell_signals=frozenset({TrendLabel.RISE}))


def test_rise_plus_triggers_sell():
    days = trading_days(3)
    universe = make_universe({"A": [100.0, 100.0, 120.0]})
    records = [
        signal("A", days[0], TrendLabel.RISE),
        signal("A", days[1], TrendLabel.RISE_PLUS),  # sold here
        signal("A", days[2], TrendLabel.RISE),
    ]
    curve, trades = run_backtest(records, universe)
    sides = [(t.side, t.date) for t in trades]
    assert ("sell", days[1]) in sides
    assert curve.points[1][1] == pytest.approx(1.0)


def test_cumulative_return_identities():
    days = trading_days(4)
    flat = EquityCurve(tuple((d, 1.0) for d in days))
    assert cumulative_return(flat) == 0.0
    doubling = EquityCurve(tuple((d, 2.0 ** i) for i, d in enumerate(days)))
    assert cumulative_return(doubling) == pytest.approx(7.0)
    # chained per-day returns multiply to the endpoint
    values = [1.0, 1.1, 0.99, 1.32]
    curve = EquityCurve(tuple(zip(days, values)))
    rets = [values[i + 1] / values[i] - 1 for i in range(3)]
    assert cumulative_return(curve) == pytest.approx(np.prod([1 + r for r in rets]) - 1)


def test_yearly_returns():
    days = [date(2015, 6, 1), date(2015, 12, 31), date(2016, 6, 1), date(2016, 12, 30)]
    curve = EquityCurve(tuple(zip(days, [1.0, 1.2, 1.2, 1.8])))
    years = yearly_returns(curve)
    assert years[2015] == pytest.approx(0.2)
    assert years[2016] == pytest.approx(0.5)


def test_equity_curve_invariants():
    days = trading_days(3)
    with pytest.raises(PipelineError):
        EquityCurve(((days[0], 1.0), (days[0], 1.1)))
    with pytest.raises(PipelineError):
        EquityCurve(((days[0], 1.0), (days[1], -0.5)))
