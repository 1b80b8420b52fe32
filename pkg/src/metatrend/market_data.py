"""Daily OHLCV ingestion and calendar alignment.

One CSV file per stock (header ``date,open,high,low,close,volume``, ISO
dates); the filename stem is the stock id. A ``universe.json`` manifest maps
stock ids to file paths and fixes the alignment policy.
"""

import csv
import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from metatrend.errors import MarketDataError
from metatrend.ioutil import atomic_write_text

logger = logging.getLogger(__name__)

CSV_HEADER = ["date", "open", "high", "low", "close", "volume"]

ALIGNMENT_POLICIES = ("intersect", "drop-short-series")


@dataclass(frozen=True)
class Bar:
    """One trading day of a single stock.

    Prices are strictly positive and satisfy low <= min(open, close) and
    high >= max(open, close); volume is non-negative.
    """

    date: date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self) -> str | None:
        """Return a description of the violated invariant, or None if valid."""
        if not all(
            p > 0 for p in (self.open, self.high, self.low, self.close)
        ):
            return "non-positive price"
        if self.volume < 0:
            return "negative volume"
        if self.low > min(self.open, self.close):
            return "low above min(open, close)"
        if self.high < max(self.open, self.close):
            return "high below max(open, close)"
        if self.low > self.high:
            return "low above high"
        return None


@dataclass(frozen=True)
class PriceSeries:
    """Validated per-stock daily bars with strictly increasing dates."""

    stock_id: str
    bars: tuple[Bar, ...]

    def __post_init__(self):
        if not self.bars:
            raise MarketDataError(f"{self.stock_id}: empty series")
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date <= prev.date:
                raise MarketDataError(
                    f"{self.stock_id}: dates not strictly increasing at {cur.date}"
                )

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def dates(self) -> tuple[date, ...]:
        return tuple(b.date for b in self.bars)

    def closes(self) -> list[float]:
        return [b.close for b in self.bars]

    def restrict(self, dates: set[date]) -> "PriceSeries":
        return PriceSeries(self.stock_id, tuple(b for b in self.bars if b.date in dates))


@dataclass(frozen=True)
class Universe:
    """Stock series aligned onto one shared trading calendar."""

    calendar: tuple[date, ...]
    series: dict[str, PriceSeries]
    alignment_policy: str

    @property
    def stock_ids(self) -> list[str]:
        return sorted(self.series)

    def close(self, stock_id: str, day: date) -> float:
        series = self.series[stock_id]
        idx = self._index()[stock_id].get(day)
        if idx is None:
            raise MarketDataError(f"{stock_id}: no bar on {day}")
        return series.bars[idx].close

    def _index(self) -> dict[str, dict[date, int]]:
        # Lazily built date->position maps; frozen dataclass, so stash on __dict__.
        cached = self.__dict__.get("_idx")
        if cached is None:
            cached = {
                sid: {b.date: i for i, b in enumerate(s.bars)}
                for sid, s in self.series.items()
            }
            self.__dict__["_idx"] = cached
        return cached


def _parse_row(stock_id: str, row_num: int, row: list[str]) -> Bar:
    if len(row) != 6:
        raise MarketDataError(
            f"{stock_id} row {row_num}: expected 6 fields, got {len(row)}"
        )
    try:
        day = date.fromisoformat(row[0])
    except ValueError as exc:
        raise MarketDataError(f"{stock_id} row {row_num}: bad date field: {exc}") from exc
    values = []
    for name, text in zip(CSV_HEADER[1:], row[1:]):
        try:
            values.append(float(text))
        except ValueError as exc:
            raise MarketDataError(
                f"{stock_id} row {row_num}: bad {name} field {text!r}"
            ) from exc
    bar = Bar(day, *values)
    violation = bar.validate()
    if violation is not None:
        raise MarketDataError(f"{stock_id} row {row_num}: {violation}")
    return bar


def load_csv(path: str | Path, stock_id: str | None = None) -> PriceSeries:
    """Load and validate one per-stock OHLCV file.

    Rows may appear in any date order; the result is sorted. Any row that
    violates a Bar invariant is reported by row number rather than dropped.
    """
    path = Path(path)
    if stock_id is None:
        stock_id = path.stem
    if not path.exists():
        raise MarketDataError(f"{stock_id}: file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarketDataError(f"{stock_id}: empty file {path}") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise MarketDataError(
                f"{stock_id}: bad header {header!r}, expected {CSV_HEADER!r}"
            )
        bars = []
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            bars.append(_parse_row(stock_id, row_num, row))
    if not bars:
        raise MarketDataError(f"{stock_id}: no data rows in {path}")
    seen: dict[date, int] = {}
    for i, bar in enumerate(bars):
        if bar.date in seen:
            raise MarketDataError(
                f"{stock_id}: duplicate date {bar.date} "
                f"(rows {seen[bar.date] + 2} and {i + 2})"
            )
        seen[bar.date] = i
    bars.sort(key=lambda b: b.date)
    return PriceSeries(stock_id, tuple(bars))


def write_csv(series: PriceSeries, path: str | Path) -> None:
    """Write a series back out; prices at 6 decimal places (load round-trips)."""
    lines = [",".join(CSV_HEADER)]
    for b in series.bars:
        lines.append(
            f"{b.date.isoformat()},{b.open:.6f},{b.high:.6f},{b.low:.6f},"
            f"{b.close:.6f},{b.volume:.6f}"
        )
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def build_universe(series_list: list[PriceSeries], policy: str = "intersect") -> Universe:
    """Align series onto a shared calendar.

    ``intersect`` keeps only dates present in every series. ``drop-short-series``
    keeps the union calendar and drops any series that does not cover it.
    """
    if policy not in ALIGNMENT_POLICIES:
        raise MarketDataError(f"unknown alignment policy {policy!r}")
    if not series_list:
        raise MarketDataError("no series given")
    ids = [s.stock_id for s in series_list]
    if len(set(ids)) != len(ids):
        raise MarketDataError("duplicate stock ids in universe")

    date_sets = {s.stock_id: set(s.dates) for s in series_list}
    if policy == "intersect":
        calendar_set: set[date] = set.intersection(*date_sets.values())
        retained = list(series_list)
    else:
        calendar_set = set.union(*date_sets.values())
        retained = [s for s in series_list if date_sets[s.stock_id] >= calendar_set]
        dropped = sorted(set(ids) - {s.stock_id for s in retained})
        if dropped:
            logger.warning("drop-short-series removed %d series: %s", len(dropped), dropped)
    if not calendar_set or not retained:
        raise MarketDataError(f"empty calendar after alignment (policy={policy})")
    calendar = tuple(sorted(calendar_set))
    aligned = {s.stock_id: s.restrict(calendar_set) for s in retained}
    return Universe(calendar=calendar, series=aligned, alignment_policy=policy)


def write_manifest(path: str | Path, stock_paths: dict[str, str], policy: str = "intersect") -> None:
    payload = {"policy": policy, "stocks": dict(sorted(stock_paths.items()))}
    atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> Universe:
    """Load every series referenced by a universe.json manifest and align them."""
    path = Path(path)
    if not path.exists():
        raise MarketDataError(f"universe manifest not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    policy = payload.get("policy", "intersect")
    stocks = payload.get("stocks")
    if not isinstance(stocks, dict) or not stocks:
        raise MarketDataError(f"{path}: manifest has no stocks")
    series = []
    for stock_id in sorted(stocks):
        file_path = Path(stocks[stock_id])
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        series.append(load_csv(file_path, stock_id=stock_id))
    return build_universe(series, policy)
