"""Technical-indicator feature rows.

Fifteen features per stock-day in a frozen order: raw OHLC, then eleven
standard indicators. Cells inside an indicator's warmup horizon are flagged
invalid and never enter downstream tensors.
"""

import hashlib
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from metatrend.errors import DatasetError
from metatrend.ioutil import read_csv, write_csv
from metatrend.market_data import PriceSeries

FEATURE_NAMES = (
    "open", "high", "low", "close",
    "ATR", "EMA20", "MOM6", "MOM12", "MA5", "MA10",
    "CCI", "MACD", "SMI", "ROC", "WILLR",
)

INDICATOR_KINDS = ("ATR", "EMA", "MOM", "MA", "CCI", "MACD", "SMI", "ROC", "WILLR")


def feature_checksum(names=FEATURE_NAMES) -> str:
    """Stable checksum of the feature-name ordering, embedded in data files."""
    return hashlib.sha256(",".join(names).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class IndicatorConfig:
    """Periods for every indicator; defaults are common industry settings."""

    atr_period: int = 14
    ema_period: int = 20
    mom_fast: int = 6
    mom_slow: int = 12
    ma_fast: int = 5
    ma_slow: int = 10
    cci_period: int = 20
    macd_fast: int = 12
    macd_slow: int = 26
    smi_period: int = 14
    smi_smooth: int = 3
    roc_period: int = 12
    willr_period: int = 14

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.macd_fast >= self.macd_slow:
            raise ValueError("MACD requires fast period < slow period")


def _sma(values: np.ndarray, period: int) -> tuple[np.ndarray, int]:
    out = np.full(values.shape, np.nan)
    if len(values) >= period:
        win = sliding_window_view(values, period)
        out[period - 1 :] = win.mean(axis=1)
    return out, period - 1


def _ema(values: np.ndarray, period: int, valid_from: int = 0) -> tuple[np.ndarray, int]:
    """EMA seeded with the SMA of the first ``period`` valid values."""
    out = np.full(values.shape, np.nan)
    start = valid_from + period - 1
    if start >= len(values):
        return out, start
    alpha = 2.0 / (period + 1.0)
    seed = values[valid_from : valid_from + period].mean()
    out[start] = seed
    prev = seed
    for t in range(start + 1, len(values)):
        prev = prev + alpha * (values[t] - prev)
        out[t] = prev
    return out, start


def _true_range(high: np.ndarray, low: np.ndarray, close: np.ndarray) -> np.ndarray:
    tr = high - low
    if len(close) > 1:
        prev_close = close[:-1]
        tr = tr.copy()
        tr[1:] = np.maximum(
            tr[1:], np.maximum(np.abs(high[1:] - prev_close), np.abs(low[1:] - prev_close))
        )
    return tr


def _atr(high, low, close, period: int) -> tuple[np.ndarray, int]:
    """Wilder's smoothing of the true range."""
    tr = _true_range(high, low, close)
    out = np.full(tr.shape, np.nan)
    if len(tr) < period:
        return out, period - 1
    prev = tr[:period].mean()
    out[period - 1] = prev
    for t in range(period, len(tr)):
        prev = (prev * (period - 1) + tr[t]) / period
        out[t] = prev
    return out, period - 1


def _mom(close, period: int) -> tuple[np.ndarray, int]:
    out = np.full(close.shape, np.nan)
    if len(close) > period:
        out[period:] = close[period:] - close[:-period]
    return out, period


def _roc(close, period: int) -> tuple[np.ndarray, int]:
    out = np.full(close.shape, np.nan)
    if len(close) > period:
        out[period:] = 100.0 * (close[period:] / close[:-period] - 1.0)
    return out, period


def _cci(high, low, close, period: int) -> tuple[np.ndarray, int]:
    """Typical-price CCI with mean absolute deviation and the 0.015 constant."""
    tp = (high + low + close) / 3.0
    out = np.full(tp.shape, np.nan)
    if len(tp) >= period:
        win = sliding_window_view(tp, period)
        sma = win.mean(axis=1)
        mad = np.abs(win - sma[:, None]).mean(axis=1)
        dev = tp[period - 1 :] - sma
        with np.errstate(invalid="ignore", divide="ignore"):
            cci = np.where(mad > 0, dev / (0.015 * mad), 0.0)
        out[period - 1 :] = cci
    return out, period - 1


def _macd(close, fast: int, slow: int) -> tuple[np.ndarray, int]:
    ema_fast, w_fast = _ema(close, fast)
    ema_slow, w_slow = _ema(close, slow)
    warmup = max(w_fast, w_slow)
    out = np.full(close.shape, np.nan)
    out[warmup:] = ema_fast[warmup:] - ema_slow[warmup:]
    return out, warmup


def _rolling_extrema(values: np.ndarray, period: int):
    hh = np.full(values.shape, np.nan)
    ll = np.full(values.shape, np.nan)
    if len(values) >= period:
        win = sliding_window_view(values, period)
        hh[period - 1 :] = win.max(axis=1)
        ll[period - 1 :] = win.min(axis=1)
    return hh, ll


def _willr(high, low, close, period: int) -> tuple[np.ndarray, int]:
    """Williams %R in [-100, 0]; defined as 0 on a flat lookback window."""
    hh, _ = _rolling_extrema(high, period)
    _, ll = _rolling_extrema(low, period)
    out = np.full(close.shape, np.nan)
    warmup = period - 1
    if len(close) >= period:
        span = hh[warmup:] - ll[warmup:]
        with np.errstate(invalid="ignore", divide="ignore"):
            wr = np.where(span > 0, -100.0 * (hh[warmup:] - close[warmup:]) / span, 0.0)
        out[warmup:] = wr
    return out, warmup


def _smi(high, low, close, period: int, smooth: int) -> tuple[np.ndarray, int]:
    """Stochastic momentum index: close minus the HH/LL midpoint, double-EMA
    smoothed, as a percentage of the half-range (0 when the range is flat)."""
    hh, _ = _rolling_extrema(high, period)
    _, ll = _rolling_extrema(low, period)
    warmup0 = period - 1
    mid = (hh + ll) / 2.0
    diff = close - mid
    span = hh - ll
    num1, w1 = _ema(diff[warmup0:], smooth)
    num2, w2 = _ema(num1[w1:], smooth)
    den1, _ = _ema(span[warmup0:], smooth)
    den2, _ = _ema(den1[w1:], smooth)
    warmup = warmup0 + w1 + w2
    out = np.full(close.shape, np.nan)
    n_tail = len(num2) - w2
    if n_tail > 0:
        num = num2[w2:]
        half = den2[w2:] / 2.0
        with np.errstate(invalid="ignore", divide="ignore"):
            smi = np.where(half > 0, 100.0 * num / half, 0.0)
        out[warmup:] = smi
    return out, warmup


def compute_indicator(series: PriceSeries, kind: str, cfg: IndicatorConfig | None = None,
                      period: int | None = None) -> tuple[np.ndarray, int]:
    """One indicator as (values, warmup length); NaN inside the warmup region.

    ``period`` overrides the config period for single-period kinds (MOM and MA
    take it as their lookback; MACD/SMI use their config pairs).
    """
    cfg = cfg or IndicatorConfig()
    if kind not in INDICATOR_KINDS:
        raise ValueError(f"unknown indicator kind {kind!r}")
    high = np.asarray([b.high for b in series.bars], dtype=np.float64)
    low = np.asarray([b.low for b in series.bars], dtype=np.float64)
    close = np.asarray([b.close for b in series.bars], dtype=np.float64)
    if kind == "ATR":
        values, warmup = _atr(high, low, close, period or cfg.atr_period)
    elif kind == "EMA":
        values, warmup = _ema(close, period or cfg.ema_period)
    elif kind == "MOM":
        values, warmup = _mom(close, period or cfg.mom_fast)
    elif kind == "MA":
        values, warmup = _sma(close, period or cfg.ma_fast)
    elif kind == "CCI":
        values, warmup = _cci(high, low, close, period or cfg.cci_period)
    elif kind == "MACD":
        values, warmup = _macd(close, cfg.macd_fast, cfg.macd_slow)
    elif kind == "SMI":
        values, warmup = _smi(high, low, close, period or cfg.smi_period, cfg.smi_smooth)
    elif kind == "ROC":
        values, warmup = _roc(close, period or cfg.roc_period)
    else:
        values, warmup = _willr(high, low, close, period or cfg.willr_period)
    if warmup >= len(close):
        raise DatasetError(
            f"{series.stock_id}: series length {len(close)} too short for "
            f"{kind} warmup {warmup}"
        )
    return values, warmup


@dataclass(frozen=True)
class FeatureMatrix:
    """15 x T feature values aligned to the series calendar, with a per-cell
    validity mask that is False inside warmup regions."""

    stock_id: str
    dates: tuple[date, ...]
    values: np.ndarray
    valid: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if self.values.shape != (len(self.feature_names), len(self.dates)):
            raise DatasetError(
                f"{self.stock_id}: feature matrix shape {self.values.shape} "
                f"!= ({len(self.feature_names)}, {len(self.dates)})"
            )
        if self.valid.shape != self.values.shape:
            raise DatasetError("validity mask shape mismatch")

    @property
    def max_warmup(self) -> int:
        """Leading columns where at least one feature is still invalid."""
        all_valid = self.valid.all(axis=0)
        idx = np.argmax(all_valid)
        if not all_valid.any():
            return self.values.shape[1]
        return int(idx)


def feature_matrix(series: PriceSeries, cfg: IndicatorConfig | None = None) -> FeatureMatrix:
    """Assemble the 15-row feature matrix for one stock."""
    cfg = cfg or IndicatorConfig()
    n = len(series)
    bars = series.bars
    rows: list[np.ndarray] = []
    warmups: list[int] = []
    for name in ("open", "high", "low", "close"):
        rows.append(np.asarray([getattr(b, name) for b in bars], dtype=np.float64))
        warmups.append(0)
    plan = [
        ("ATR", cfg.atr_period),
        ("EMA", cfg.ema_period),
        ("MOM", cfg.mom_fast),
        ("MOM", cfg.mom_slow),
        ("MA", cfg.ma_fast),
        ("MA", cfg.ma_slow),
        ("CCI", cfg.cci_period),
        ("MACD", None),
        ("SMI", None),
        ("ROC", cfg.roc_period),
        ("WILLR", cfg.willr_period),
    ]
    for kind, period in plan:
        values, warmup = compute_indicator(series, kind, cfg, period=period)
        rows.append(values)
        warmups.append(warmup)
    values = np.vstack(rows)
    valid = np.ones(values.shape, dtype=bool)
    for i, warmup in enumerate(warmups):
        valid[i, :warmup] = False
    # Warmup cells are NaN by construction; scrub them so masked cells are
    # never mistaken for data.
    values = np.where(valid, values, np.nan)
    if not np.isfinite(values[valid]).all():
        raise DatasetError(f"{series.stock_id}: non-finite feature value outside warmup")
    return FeatureMatrix(
        stock_id=series.stock_id, dates=series.dates, values=values, valid=valid
    )


def write_features_csv(fm: FeatureMatrix, path: str | Path, config_hash: str | None = None) -> None:
    """Features as date + 15 columns; masked cells are left empty. Values use
    shortest round-trip formatting so files reproduce the matrix exactly."""
    rows = []
    for t, day in enumerate(fm.dates):
        cells = [day.isoformat()]
        for i in range(len(fm.feature_names)):
            cells.append(repr(float(fm.values[i, t])) if fm.valid[i, t] else "")
        rows.append(cells)
    write_csv(Path(path), ["date", *fm.feature_names], rows, config_hash=config_hash)


def read_features_csv(path: str | Path, stock_id: str, expect_hash: str | None = None) -> FeatureMatrix:
    header, rows, _ = read_csv(Path(path), expect_hash=expect_hash, producer="features")
    if tuple(header[1:]) != FEATURE_NAMES or header[:1] != ["date"]:
        raise DatasetError(f"{path}: unexpected feature columns {header!r}")
    dates = []
    values = np.full((len(FEATURE_NAMES), len(rows)), np.nan)
    valid = np.zeros((len(FEATURE_NAMES), len(rows)), dtype=bool)
    for t, row in enumerate(rows):
        dates.append(date.fromisoformat(row[0]))
        for i, cell in enumerate(row[1:]):
            if cell != "":
                values[i, t] = float(cell)
                valid[i, t] = True
    return FeatureMatrix(
        stock_id=stock_id, dates=tuple(dates), values=values, valid=valid
    )
