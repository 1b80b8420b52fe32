"""Synthetic universes for desk-scale runs and the acceptance fixtures.

Three pattern families:

* ``random-walk``: geometric random walk, for property tests.
* ``deterministic``: a fixed 12-day log-price cycle (ramp, spike top, settle,
  plateau, mirrored crash) whose slope-detection labels cover all four
  classes every cycle; stocks differ by phase shift. Perfectly periodic in
  log space, so z-scored windows repeat and the planted classes are
  learnable.
* ``single-peak``: one long rise then one long fall.
"""

import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from metatrend.errors import ConfigError
from metatrend.market_data import Bar, PriceSeries, write_csv, write_manifest

PATTERNS = ("random-walk", "deterministic", "single-peak")

# Daily log-rates (percent) of the deterministic cycle. The steep two-day
# moves end in a one-sigma spike while the slope is still signed, which is
# what produces the rise_plus / fall_plus days at top and trough.
CYCLE_RATES_PCT = (2, 8, 8, -4, -4, -0.5, -2, -8, -8, 4, 4, 0.5)

START_DATE = date(2015, 1, 1)


@dataclass(frozen=True)
class SynthSpec:
    stocks: int = 4
    days: int = 540
    pattern: str = "deterministic"
    start_date: date = START_DATE

    def __post_init__(self):
        if self.stocks < 1:
            raise ConfigError("at least one stock required")
        if self.days < 10:
            raise ConfigError("at least 10 days required")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}")


def business_days(start: date, count: int) -> list[date]:
    days = []
    day = start
    while len(days) < count:
        if day.weekday() < 5:
            days.append(day)
        day += timedelta(days=1)
    return days


def _deterministic_closes(days: int, phase: int, start_price: float) -> np.ndarray:
    period = len(CYCLE_RATES_PCT)
    log_p = [math.log(start_price)]
    for t in range(days - 1):
        log_p.append(log_p[-1] + CYCLE_RATES_PCT[(t + phase) % period] / 100.0)
    return np.exp(np.array(log_p))


def _single_peak_closes(days: int, start_price: float) -> np.ndarray:
    peak = days * 3 // 5
    rates = [0.01] * peak + [-0.01] * (days - 1 - peak)
    log_p = np.concatenate([[math.log(start_price)], np.cumsum(rates) + math.log(start_price)])
    return np.exp(log_p)


def _random_walk_closes(days: int, start_price: float, rng: np.random.Generator) -> np.ndarray:
    steps = rng.normal(loc=0.0002, scale=0.015, size=days - 1)
    log_p = np.concatenate([[0.0], np.cumsum(steps)]) + math.log(start_price)
    return np.exp(log_p)


def _bars_from_closes(dates, closes, rng: np.random.Generator | None) -> list[Bar]:
    bars = []
    prev_close = closes[0]
    for i, (day, close) in enumerate(zip(dates, closes)):
        open_ = prev_close if i > 0 else close
        hi_base = max(open_, close)
        lo_base = min(open_, close)
        if rng is None:
            high = hi_base * 1.004
            low = lo_base * 0.996
            volume = 1_000_000.0
        else:
            high = hi_base * (1.0 + abs(rng.normal(0, 0.004)))
            low = lo_base * (1.0 - min(abs(rng.normal(0, 0.004)), 0.5))
            volume = float(np.round(rng.lognormal(13.0, 0.3)))
        bars.append(Bar(day, float(open_), float(high), float(low), float(close), volume))
        prev_close = close
    return bars


def make_series(spec: SynthSpec, index: int, seed: int) -> PriceSeries:
    stock_id = f"SYN{index:02d}"
    dates = business_days(spec.start_date, spec.days)
    start_price = 100.0 * (1.0 + 0.25 * index)
    if spec.pattern == "deterministic":
        closes = _deterministic_closes(spec.days, phase=3 * index, start_price=start_price)
        rng = None
    elif spec.pattern == "single-peak":
        closes = _single_peak_closes(spec.days, start_price)
        rng = None
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))
        closes = _random_walk_closes(spec.days, start_price, rng)
    return PriceSeries(stock_id, tuple(_bars_from_closes(dates, closes, rng)))


def synth_generate(out_dir: str | Path, spec: SynthSpec, seed: int) -> Path:
    """Write one CSV per stock plus a universe.json manifest; returns the
    manifest path. Deterministic for a given (spec, seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stock_paths = {}
    for index in range(spec.stocks):
        series = make_series(spec, index, seed)
        file_name = f"{series.stock_id}.csv"
        write_csv(series, out_dir / file_name)
        stock_paths[series.stock_id] = file_name
    manifest = out_dir / "universe.json"
    write_manifest(manifest, stock_paths, policy="intersect")
    return manifest


def planted_proportions(spec: SynthSpec, labeling_cfg=None) -> dict[str, float]:
    """Label one steady-state cycle of the deterministic pattern and return
    the expected class proportions (the generator's self-check baseline)."""
    from metatrend.labeling import LabelingConfig, TrendLabel, label_day

    if spec.pattern != "deterministic":
        raise ConfigError("planted proportions only exist for the deterministic pattern")
    labeling_cfg = labeling_cfg or LabelingConfig()
    period = len(CYCLE_RATES_PCT)
    closes = _deterministic_closes(6 * period, phase=0, start_price=100.0)
    counts = {label: 0 for label in TrendLabel}
    start = 3 * period
    for d in range(start, start + period):
        label = label_day(closes, d, labeling_cfg)
        if label is not None:
            counts[label] += 1
    total = sum(counts.values())
    return {label.csv_name: counts[label] / total for label in TrendLabel}
