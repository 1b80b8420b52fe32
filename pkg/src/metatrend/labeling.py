"""Slope-detection trend labeling.

A day ``d`` is labeled by comparing the mean close of the next K days against
the mean close of the trailing K days (day d included). The sign of that
difference picks the rise/fall family; crossing one standard deviation of the
surrounding 2K closes upgrades the label to the "plus" variant, which marks
the end of a rising period (peak) or of a falling period (trough).

Days without a full 2K-day window, and days whose forward/backward means tie
exactly, receive no label.
"""

import logging
import math
from dataclasses import dataclass
from datetime import date
from enum import IntEnum
from pathlib import Path

import numpy as np

from metatrend.errors import DatasetError
from metatrend.ioutil import read_csv, write_csv
from metatrend.market_data import PriceSeries

logger = logging.getLogger(__name__)


class TrendLabel(IntEnum):
    """Four-class trend label; ordinal encoding is frozen for tensors/metrics."""

    RISE_PLUS = 0
    RISE = 1
    FALL = 2
    FALL_PLUS = 3

    @property
    def csv_name(self) -> str:
        return _CSV_NAMES[self]

    @classmethod
    def from_csv_name(cls, name: str) -> "TrendLabel":
        try:
            return _FROM_CSV[name]
        except KeyError:
            raise ValueError(f"unknown label name {name!r}") from None


_CSV_NAMES = {
    TrendLabel.RISE_PLUS: "rise_plus",
    TrendLabel.RISE: "rise",
    TrendLabel.FALL: "fall",
    TrendLabel.FALL_PLUS: "fall_plus",
}
_FROM_CSV = {v: k for k, v in _CSV_NAMES.items()}

WINDOW_AGGREGATES = ("mean", "sum")


@dataclass(frozen=True)
class LabelingConfig:
    """K is the window half-width in trading days (the paper's K=3 default).

    ``window_aggregate`` selects whether the forward/backward windows are
    averaged or summed before differencing; the label itself only depends on
    the sign of the difference, which both choices preserve.
    """

    k: int = 3
    window_aggregate: str = "mean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.window_aggregate not in WINDOW_AGGREGATES:
            raise ValueError(f"window_aggregate must be one of {WINDOW_AGGREGATES}")


@dataclass(frozen=True)
class SlopeStats:
    """Windowed statistics around one day: forward/backward aggregate closes,
    their difference, and the mean/standard deviation over the 2K-day span."""

    f_bar: float
    b_bar: float
    delta: float
    mu: float
    sigma: float


class WindowOutOfRange(Exception):
    """The 2K-day window around the requested day does not exist."""


def slope_stats(closes, d: int, cfg: LabelingConfig) -> SlopeStats:
    """Compute the slope statistics at index ``d`` of a close-price sequence.

    The window is the 2K days [d-K+1, d+K]; sigma uses the population form
    (denominator 2K, no Bessel correction).
    """
    closes = np.asarray(closes, dtype=np.float64)
    k = cfg.k
    if d - (k - 1) < 0 or d + k > len(closes) - 1:
        raise WindowOutOfRange(f"no 2K window at index {d} (K={k}, n={len(closes)})")
    backward = closes[d - k + 1 : d + 1]
    forward = closes[d + 1 : d + k + 1]
    if cfg.window_aggregate == "mean":
        f_bar = float(forward.mean())
        b_bar = float(backward.mean())
    else:
        f_bar = float(forward.sum())
        b_bar = float(backward.sum())
    window = closes[d - k + 1 : d + k + 1]
    mu = float(window.mean())
    sigma = math.sqrt(float(np.square(window - mu).sum()) / (2 * k))
    return SlopeStats(f_bar=f_bar, b_bar=b_bar, delta=f_bar - b_bar, mu=mu, sigma=sigma)


def label_from_stats(close_d: float, stats: SlopeStats) -> TrendLabel | None:
    """Apply the judgement conditions; plus-labels take priority in each sign."""
    if stats.delta > 0:
        if close_d > stats.mu + stats.sigma:
            return TrendLabel.RISE_PLUS
        return TrendLabel.RISE
    if stats.delta < 0:
        if close_d < stats.mu - stats.sigma:
            return TrendLabel.FALL_PLUS
        return TrendLabel.FALL
    return None


def label_day(closes, d: int, cfg: LabelingConfig) -> TrendLabel | None:
    """Label one day, or None when unlabeled (no window, or zero slope)."""
    try:
        stats = slope_stats(closes, d, cfg)
    except WindowOutOfRange:
        return None
    closes = np.asarray(closes, dtype=np.float64)
    return label_from_stats(float(closes[d]), stats)


@dataclass(frozen=True)
class LabelSequence:
    """Per-stock labels keyed by date; unlabeled days are simply absent."""

    stock_id: str
    entries: dict[date, TrendLabel]

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return sorted(self.entries.items())

    def class_counts(self) -> dict[TrendLabel, int]:
        counts = {label: 0 for label in TrendLabel}
        for lab in self.entries.values():
            counts[lab] += 1
        return counts


def label_series(series: PriceSeries, cfg: LabelingConfig) -> LabelSequence:
    """Label every interior day of a series.

    The first K-1 and last K days have no full window and stay unlabeled. A
    series shorter than 2K yields an empty sequence with a warning.
    """
    n = len(series)
    if n < 2 * cfg.k:
        logger.warning(
            "%s: series length %d < 2K=%d, nothing labeled",
            series.stock_id, n, 2 * cfg.k,
        )
        return LabelSequence(series.stock_id, {})
    closes = np.asarray(series.closes(), dtype=np.float64)
    entries: dict[date, TrendLabel] = {}
    for d in range(cfg.k - 1, n - cfg.k):
        stats = slope_stats(closes, d, cfg)
        label = label_from_stats(float(closes[d]), stats)
        if label is not None:
            entries[series.bars[d].date] = label
    return LabelSequence(series.stock_id, entries)


def sigma_ratio_series(series: PriceSeries, cfg: LabelingConfig) -> list[tuple[date, float]]:
    """The sigma/close diagnostic ratio for every day with a full 2K window."""
    n = len(series)
    closes = np.asarray(series.closes(), dtype=np.float64)
    out = []
    for d in range(cfg.k - 1, n - cfg.k):
        stats = slope_stats(closes, d, cfg)
        out.append((series.bars[d].date, stats.sigma / float(closes[d])))
    return out


def yearly_quartiles(ratios: list[tuple[date, float]]) -> dict[int, dict[str, float]]:
    """Aggregate (date, ratio) points into per-calendar-year five-number summaries."""
    by_year: dict[int, list[float]] = {}
    for day, ratio in ratios:
        by_year.setdefault(day.year, []).append(ratio)
    summary = {}
    for year in sorted(by_year):
        values = np.asarray(by_year[year], dtype=np.float64)
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        summary[year] = {
            "min": float(values.min()),
            "q1": float(q1),
            "median": float(med),
            "q3": float(q3),
            "max": float(values.max()),
            "count": int(values.size),
        }
    return summary


def write_labels_csv(labels: LabelSequence, path: str | Path, config_hash: str | None = None) -> None:
    rows = [(day.isoformat(), lab.csv_name) for day, lab in labels.items()]
    write_csv(Path(path), ["date", "label"], rows, config_hash=config_hash)


def read_labels_csv(path: str | Path, stock_id: str, expect_hash: str | None = None) -> LabelSequence:
    header, rows, _ = read_csv(Path(path), expect_hash=expect_hash, producer="label")
    if header != ["date", "label"]:
        raise DatasetError(f"{path}: unexpected header {header!r}")
    entries = {}
    for row in rows:
        entries[date.fromisoformat(row[0])] = TrendLabel.from_csv_name(row[1])
    return LabelSequence(stock_id, entries)
