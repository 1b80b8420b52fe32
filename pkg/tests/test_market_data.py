import random
from datetime import date, timedelta

import pytest

from metatrend.errors import MarketDataError
from metatrend.market_data import (
    Bar,
    PriceSeries,
    build_universe,
    load_csv,
    load_manifest,
    write_csv,
    write_manifest,
)
from tests.conftest import series_from_closes, trading_days

HEADER = "date,open,high,low,close,volume\n"


def write_file(path, rows):
    path.write_text(HEADER + "".join(r + "\n" for r in rows))
    return path


def test_load_csv_three_rows(tmp_path):
    path = write_file(tmp_path / "AAA.csv", [
        "2015-01-02,10,11,9,10.5,100",
        "2015-01-05,10.5,12,10,11,120",
        "2015-01-06,11,11.5,10.5,11.2,90",
    ])
    series = load_csv(path)
    assert series.stock_id == "AAA"
    assert len(series) == 3
    assert series.bars[0].close == 10.5


def test_high_below_low_names_row(tmp_path):
    path = write_file(tmp_path / "BAD.csv", [
        "2015-01-02,10,11,9,10.5,100",
        "2015-01-05,10.5,9.0,10.0,10.2,120",
    ])
    with pytest.raises(MarketDataError, match="row 3"):
        load_csv(path)


def test_shuffled_dates_equal_sorted(tmp_path):
    rows = [
        "2015-01-06,11,11.5,10.5,11.2,90",
        "2015-01-02,10,11,9,10.5,100",
        "2015-01-05,10.5,12,10,11,120",
    ]
    shuffled = load_csv(write_file(tmp_path / "S.csv", rows))
    ordered = load_csv(write_file(tmp_path / "O.csv", sorted(rows)))
    assert shuffled.dates == ordered.dates
    assert [b.close for b in shuffled.bars] == [b.close for b in ordered.bars]


def test_duplicate_date_rejected(tmp_path):
    path = write_file(tmp_path / "D.csv", [
        "2015-01-02,10,11,9,10.5,100",
        "2015-01-02,10,11,9,10.4,100",
    ])
    with pytest.raises(MarketDataError, match="duplicate date"):
        load_csv(path)


@pytest.mark.parametrize("rows,msg", [
    ([], "no data rows"),
    (["2015-01-02,10,11,9"], "expected 6 fields"),
    (["2015/01/02,10,11,9,10.5,100"], "bad date"),
    (["2015-01-02,ten,11,9,10.5,100"], "bad open"),
    (["2015-01-02,10,11,9,-1,100"], "non-positive price"),
    (["2015-01-02,10,11,9,10.5,-5"], "negative volume"),
])
def test_malformed_inputs(tmp_path, rows, msg):
    path = write_file(tmp_path / "M.csv", rows)
    with pytest.raises(MarketDataError, match=msg):
        load_csv(path)


def test_missing_file_and_bad_header(tmp_path):
    with pytest.raises(MarketDataError, match="not found"):
        load_csv(tmp_path / "nope.csv")
    path = tmp_path / "H.csv"
    path.write_text("date,o,h,l,c,v\n2015-01-02,10,11,9,10.5,100\n")
    with pytest.raises(MarketDataError, match="bad header"):
        load_csv(path)
    (tmp_path / "E.csv").write_text("")
    with pytest.raises(MarketDataError, match="empty file"):
        load_csv(tmp_path / "E.csv")


def test_write_load_round_trip(tmp_path):
    rng = random.Random(7)
    closes = [round(100 + rng.uniform(-5, 5), 6) for _ in range(40)]
    series = series_from_closes(closes, "RT")
    path = tmp_path / "RT.csv"
    write_csv(series, path)
    loaded = load_csv(path)
    assert loaded.dates == series.dates
    for a, b in zip(loaded.bars, series.bars):
        for field in ("open", "high", "low", "close", "volume"):
            assert getattr(a, field) == pytest.approx(getattr(b, field), abs=5e-7)
    # writing the loaded series again reproduces the identical file
    path2 = tmp_path / "RT2.csv"
    write_csv(loaded, path2)
    assert path.read_text() == path2.read_text()


def test_bar_invariants_enforced():
    with pytest.raises(MarketDataError):
        PriceSeries("X", ())
    day = date(2015, 1, 2)
    assert Bar(day, 10, 9.9, 9, 9.5, 0).validate() is not None
    assert Bar(day, 10, 11, 9, 10.5, 0).validate() is None


def _series_with_dates(stock_id, dates):
    bars = tuple(Bar(d, 10, 11, 9, 10, 1) for d in dates)
    return PriceSeries(stock_id, bars)


def test_build_universe_identical_dates():
    days = trading_days(5)
    u = build_universe([_series_with_dates("A", days), _series_with_dates("B", days)])
    assert list(u.calendar) == days


def test_build_universe_intersection():
    d1, d2, d3, d4 = trading_days(4)
    a = _series_with_dates("A", [d1, d2, d3])
    b = _series_with_dates("B", [d2, d3, d4])
    u = build_universe([a, b], "intersect")
    assert list(u.calendar) == [d2, d3]
    for s in u.series.values():
        assert s.dates == (d2, d3)


def test_build_universe_random_gaps_matches_set_oracle():
    rng = random.Random(3)
    days = trading_days(60)
    all_series = []
    date_sets = []
    for i in range(5):
        kept = sorted(rng.sample(days, 45), key=lambda d: d)
        all_series.append(_series_with_dates(f"S{i}", kept))
        date_sets.append(set(kept))
    u = build_universe(all_series, "intersect")
    oracle = set.intersection(*date_sets)
    assert set(u.calendar) == oracle
    # ordering independence
    rng.shuffle(all_series)
    u2 = build_universe(all_series, "intersect")
    assert u2.calendar == u.calendar


def test_build_universe_drop_short_series():
    days = trading_days(10)
    full = _series_with_dates("FULL", days)
    short = _series_with_dates("SHORT", days[:5])
    u = build_universe([full, short], "drop-short-series")
    assert list(u.calendar) == days
    assert set(u.series) == {"FULL"}


def test_build_universe_empty_calendar():
    d1, d2 = trading_days(2)
    with pytest.raises(MarketDataError, match="empty calendar"):
        build_universe(
            [_series_with_dates("A", [d1]), _series_with_dates("B", [d2])], "intersect"
        )
    with pytest.raises(MarketDataError, match="unknown alignment policy"):
        build_universe([_series_with_dates("A", [d1])], "middle-out")


def test_manifest_round_trip(tmp_path):
    days = trading_days(6)
    for sid in ("AAA", "BBB"):
        write_csv(_series_with_dates(sid, days), tmp_path / f"{sid}.csv")
    manifest = tmp_path / "universe.json"
    write_manifest(manifest, {"AAA": "AAA.csv", "BBB": "BBB.csv"})
    u = load_manifest(manifest)
    assert u.stock_ids == ["AAA", "BBB"]
    assert list(u.calendar) == days
    assert u.close("AAA", days[0]) == 10
