import numpy as np
import pytest

from metatrend.errors import DatasetError
from metatrend.indicators import (
    FEATURE_NAMES,
    IndicatorConfig,
    compute_indicator,
    feature_checksum,
    feature_matrix,
    read_features_csv,
    write_features_csv,
)
from metatrend.market_data import Bar, PriceSeries
from tests.conftest import random_walk_closes, series_from_closes, trading_days

LINEAR_SCALE = {"open", "high", "low", "close", "ATR", "EMA20", "MOM6", "MOM12",
                "MA5", "MA10", "MACD"}
SCALE_FREE = {"CCI", "SMI", "ROC", "WILLR"}


def naive_atr(highs, lows, closes, period=14):
    """Straight-loop Wilder ATR, kept deliberately independent of the library."""
    trs = []
    for i in range(len(closes)):
        if i == 0:
            trs.append(highs[0] - lows[0])
        else:
            trs.append(max(highs[i] - lows[i],
                           abs(highs[i] - closes[i - 1]),
                           abs(lows[i] - closes[i - 1])))
    out = [None] * len(closes)
    if len(closes) < period:
        return out
    atr = sum(trs[:period]) / period
    out[period - 1] = atr
    for i in range(period, len(closes)):
        atr = (atr * (period - 1) + trs[i]) / period
        out[i] = atr
    return out


def flat_series(closes, stock_id="FLAT"):
    return series_from_closes(closes, stock_id, flat_bars=True)


def test_ma5_of_arithmetic_run():
    series = flat_series([1, 2, 3, 4, 5])
    values, warmup = compute_indicator(series, "MA", period=5)
    assert warmup == 4
    assert values[4] == pytest.approx(3.0)


def test_constant_series_stationary_indicators():
    series = flat_series([100.0] * 60)
    for kind, expected in [("EMA", 100.0), ("MACD", 0.0), ("MOM", 0.0),
                           ("ROC", 0.0), ("ATR", 0.0), ("CCI", 0.0),
                           ("WILLR", 0.0), ("SMI", 0.0)]:
        values, warmup = compute_indicator(series, kind)
        tail = values[warmup:]
        assert np.allclose(tail, expected), kind


def test_willr_endpoints():
    closes = [10, 11, 12, 13, 14, 15, 14, 13, 12, 11, 10, 11, 12, 13, 20]
    series = flat_series(closes)
    values, warmup = compute_indicator(series, "WILLR", period=14)
    assert values[14] == pytest.approx(0.0)       # close equals the highest high
    closes[-1] = 1.0
    series = flat_series(closes)
    values, _ = compute_indicator(series, "WILLR", period=14)
    assert values[14] == pytest.approx(-100.0)    # close equals the lowest low


def test_atr_matches_naive_loop():
    rng = np.random.default_rng(3)
    closes = random_walk_closes(30, seed=3)
    series = series_from_closes(closes, "ATR")
    highs = [b.high for b in series.bars]
    lows = [b.low for b in series.bars]
    cl = [b.close for b in series.bars]
    values, warmup = compute_indicator(series, "ATR", period=14)
    oracle = naive_atr(highs, lows, cl, 14)
    assert warmup == 13
    for i in range(len(cl)):
        if oracle[i] is None:
            assert np.isnan(values[i])
        else:
            assert values[i] == pytest.approx(oracle[i], rel=1e-12)


def test_mom_and_roc_definitions():
    closes = list(random_walk_closes(40, seed=8))
    series = flat_series(closes)
    mom, w = compute_indicator(series, "MOM", period=6)
    assert w == 6
    for i in range(6, 40):
        assert mom[i] == pytest.approx(closes[i] - closes[i - 6])
    roc, w = compute_indicator(series, "ROC", period=12)
    assert w == 12
    for i in range(12, 40):
        assert roc[i] == pytest.approx(100 * (closes[i] / closes[i - 12] - 1))


def test_ema_seed_and_recursion():
    closes = list(random_walk_closes(30, seed=1))
    series = flat_series(closes)
    values, warmup = compute_indicator(series, "EMA", period=20)
    assert warmup == 19
    assert values[19] == pytest.approx(sum(closes[:20]) / 20)
    alpha = 2 / 21
    expected = values[19]
    for i in range(20, 30):
        expected = expected + alpha * (closes[i] - expected)
        assert values[i] == pytest.approx(expected)


def test_cci_naive_window():
    closes = list(random_walk_closes(40, seed=5))
    series = series_from_closes(closes, "CCI")
    values, warmup = compute_indicator(series, "CCI", period=20)
    assert warmup == 19
    tp = [(b.high + b.low + b.close) / 3 for b in series.bars]
    for t in range(19, 40):
        window = tp[t - 19 : t + 1]
        sma = sum(window) / 20
        mad = sum(abs(x - sma) for x in window) / 20
        expected = (tp[t] - sma) / (0.015 * mad)
        assert values[t] == pytest.approx(expected, rel=1e-9)


def test_feature_matrix_shape_order_and_mask():
    series = series_from_closes(random_walk_closes(300, seed=0), "FM")
    fm = feature_matrix(series)
    assert fm.values.shape == (15, 300)
    assert fm.feature_names == FEATURE_NAMES
    # OHLC passthrough
    for row, attr in enumerate(("open", "high", "low", "close")):
        raw = np.array([getattr(b, attr) for b in series.bars])
        assert np.array_equal(fm.values[row], raw)
        assert fm.valid[row].all()
    # contiguous warmup per row, then all valid
    for row in range(15):
        invalid = np.flatnonzero(~fm.valid[row])
        if invalid.size:
            assert invalid.max() == invalid.size - 1
    assert np.isfinite(fm.values[fm.valid]).all()
    assert fm.max_warmup == 25  # slow MACD EMA dominates the defaults


def test_feature_rows_match_independent_recomputation():
    series = series_from_closes(random_walk_closes(120, seed=7), "FM2")
    cfg = IndicatorConfig()
    fm = feature_matrix(series, cfg)
    plan = [
        ("ATR", cfg.atr_period), ("EMA", cfg.ema_period), ("MOM", cfg.mom_fast),
        ("MOM", cfg.mom_slow), ("MA", cfg.ma_fast), ("MA", cfg.ma_slow),
        ("CCI", cfg.cci_period), ("MACD", None), ("SMI", None),
        ("ROC", cfg.roc_period), ("WILLR", cfg.willr_period),
    ]
    for row, (kind, period) in enumerate(plan, start=4):
        values, warmup = compute_indicator(series, kind, cfg, period=period)
        assert np.array_equal(fm.valid[row], np.arange(120) >= warmup)
        assert np.allclose(fm.values[row][warmup:], values[warmup:], rtol=0, atol=0)


def test_no_lookahead_shift_equivariance():
    closes = random_walk_closes(130, seed=13)
    short = feature_matrix(series_from_closes(closes[:100], "S"))
    full = feature_matrix(series_from_closes(closes, "S"))
    # identical prefix: appending future bars never changes earlier values
    assert np.array_equal(short.valid, full.valid[:, :100])
    prefix = full.values[:, :100]
    mask = short.valid
    assert np.allclose(short.values[mask], prefix[mask], rtol=0, atol=0)


def test_price_scale_behavior():
    closes = random_walk_closes(150, seed=21)
    base = feature_matrix(series_from_closes(closes, "B"))
    scaled = feature_matrix(series_from_closes(closes * 7.0, "B"))
    for row, name in enumerate(FEATURE_NAMES):
        mask = base.valid[row]
        a = base.values[row][mask]
        b = scaled.values[row][mask]
        if name in LINEAR_SCALE:
            assert np.allclose(b, 7.0 * a, rtol=1e-9), name
        else:
            assert name in SCALE_FREE
            assert np.allclose(b, a, rtol=1e-9, atol=1e-9), name


def test_series_too_short():
    series = flat_series([100.0] * 10)
    with pytest.raises(DatasetError, match="too short"):
        compute_indicator(series, "MACD")


def test_indicator_config_validation():
    with pytest.raises(ValueError):
        IndicatorConfig(atr_period=0)
    with pytest.raises(ValueError):
        IndicatorConfig(macd_fast=26, macd_slow=12)
    with pytest.raises(ValueError):
        compute_indicator(flat_series([1.0] * 30), "RSI")


def test_features_csv_round_trip(tmp_path):
    series = series_from_closes(random_walk_closes(90, seed=17), "RT")
    fm = feature_matrix(series)
    path = tmp_path / "features_RT.csv"
    write_features_csv(fm, path, config_hash="deadbeef")
    loaded = read_features_csv(path, "RT", expect_hash="deadbeef")
    assert loaded.dates == fm.dates
    assert np.array_equal(loaded.valid, fm.valid)
    assert np.array_equal(loaded.values[loaded.valid], fm.values[fm.valid])


def test_feature_checksum_stable():
    assert feature_checksum() == feature_checksum(FEATURE_NAMES)
    assert feature_checksum(("a", "b")) != feature_checksum()
