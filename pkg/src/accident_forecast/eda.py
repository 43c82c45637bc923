"""Descriptive statistics over accident records as plot-ready count tables.

Every table carries counts, shares of the counted rows, and the number of
records it excluded (missing values), so counts + excluded always equals
the number of records passed in.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ingest import AccidentRecord

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
GRANULARITIES = ("daily", "monthly", "yearly")
# the seven tables written by default; day_of_month only on request
TABLES = ("state", "hourly", "daily", "monthly", "yearly", "weekday", "windspeed")
EXTRA_TABLES = ("day_of_month",)
FORMATS = ("csv", "report")


@dataclass
class StatTable:
    """Counts per key. Keys are unique and in their natural order."""

    name: str
    key_name: str
    keys: list
    counts: np.ndarray
    excluded: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def shares(self) -> np.ndarray:
        t = self.total
        if t == 0:
            return np.zeros(len(self.keys))
        return self.counts / t

    def ranked(self) -> list[tuple]:
        """(key, count) pairs by descending count, ties in key order."""
        order = sorted(range(len(self.keys)), key=lambda i: -int(self.counts[i]))
        return [(self.keys[i], int(self.counts[i])) for i in order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.key_name, "count", "share"])
        for k, c, s in zip(self.keys, self.counts.tolist(), self.shares.tolist()):
            w.writerow([k, c, repr(float(s))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"name": self.name, "key": self.key_name, "keys": list(self.keys),
                "counts": [int(c) for c in self.counts], "shares": [float(s) for s in self.shares],
                "excluded": int(self.excluded)}


def _tally(records: Sequence[AccidentRecord], key: Callable, threads: int = 1,
           chunk_size: int = 50_000) -> tuple[Counter, int]:
    """Count key(rec) over records; None keys are excluded.

    Chunks are counted independently and merged in chunk order, so the
    result does not depend on ``threads``.
    """
    records = list(records)
    chunks = [records[i:i + chunk_size] for i in range(0, len(records), chunk_size)]

    def count(chunk):
        c = Counter()
        missing = 0
        for rec in chunk:
            k = key(rec)
            if k is None:
                missing += 1
            else:
                c[k] += 1
        return c, missing

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(count, chunks))
    else:
        parts = [count(ch) for ch in chunks]
    total, missing = Counter(), 0
    for c, m in parts:
        total.update(c)
        missing += m
    return total, missing


def _table(name, key_name, keys, tally: Counter, excluded: int) -> StatTable:
    counts = np.array([tally.get(k, 0) for k in keys], dtype=np.int64)
    return StatTable(name, key_name, list(keys), counts, excluded)


def state_counts(records, threads: int = 1) -> StatTable:
    tally, missing = _tally(records, lambda r: r.state, threads)
    return _table("state", "state", sorted(tally), tally, missing)


def hourly_histogram(records, threads: int = 1) -> StatTable:
    tally, missing = _tally(records, lambda r: r.start_time.hour, threads)
    return _table("hourly", "hour", range(24), tally, missing)


def _month_range(lo: tuple[int, int], hi: tuple[int, int]):
    y, m = lo
    while (y, m) <= hi:
        yield f"{y:04d}-{m:02d}"
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)


def frequency_series(records, granularity: str = "daily", threads: int = 1) -> StatTable:
    """Counts per day, month or year, zero-filled inside the observed range."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    if granularity == "daily":
        tally, missing = _tally(records, lambda r: r.start_time.date(), threads)
        keys = []
        if tally:
            d, end = min(tally), max(tally)
            while d <= end:
                keys.append(d)
                d += timedelta(days=1)
        table = _table("daily", "date", keys, tally, missing)
        table.keys = [k.isoformat() for k in keys]
        return table
    if granularity == "monthly":
        tally, missing = _tally(records, lambda r: (r.start_time.year, r.start_time.month), threads)
        keys = list(_month_range(min(tally), max(tally))) if tally else []
        tally = Counter({f"{y:04d}-{m:02d}": c for (y, m), c in tally.items()})
        return _table("monthly", "month", keys, tally, missing)
    tally, missing = _tally(records, lambda r: r.start_time.year, threads)
    keys = list(range(min(tally), max(tally) + 1)) if tally else []
    return _table("yearly", "year", keys, tally, missing)


def weekday_shares(records, threads: int = 1) -> StatTable:
    tally, missing = _tally(records, lambda r: WEEKDAYS[r.start_time.weekday()], threads)
    return _table("weekday", "weekday", WEEKDAYS, tally, missing)


def day_of_month(records, threads: int = 1) -> StatTable:
    tally, missing = _tally(records, lambda r: r.start_time.day, threads)
    return _table("day_of_month", "day", range(1, 32), tally, missing)


def _wind_label(k: int, width: float, n_regular: int) -> str:
    if k >= n_regular:
        return f"{n_regular * width:g}+"
    return f"{k * width:g}-{(k + 1) * width:g}"


def windspeed_profile(records, bin_width: float = 1.0, cap: float = 60.0, threads: int = 1) -> StatTable:
    """Counts per wind-speed bin [k*w, (k+1)*w); speeds >= cap share one overflow bin.

    Bins run from 0 to the highest occupied one. Records without a wind
    speed are excluded and counted.
    """
    if bin_width <= 0 or cap <= 0:
        raise ValueError("bin_width and cap must be positive")
    n_regular = int(np.ceil(cap / bin_width))

    def key(r):
        v = r.wind_speed_mph
        if v is None:
            return None
        return min(int(v // bin_width), n_regular)

    tally, missing = _tally(records, key, threads)
    bins = list(range(max(tally) + 1)) if tally else []
    table = _table("windspeed", "windspeed_bin", bins, tally, missing)
    table.keys = [_wind_label(k, bin_width, n_regular) for k in bins]
    return table


def compute_tables(records, names: Sequence[str] = TABLES, threads: int = 1,
                   bin_width: float = 1.0) -> dict[str, StatTable]:
    records = list(records)
    makers = {
        "state": lambda: state_counts(records, threads),
        "hourly": lambda: hourly_histogram(records, threads),
        "daily": lambda: frequency_series(records, "daily", threads),
        "monthly": lambda: frequency_series(records, "monthly", threads),
        "yearly": lambda: frequency_series(records, "yearly", threads),
        "weekday": lambda: weekday_shares(records, threads),
        "windspeed": lambda: windspeed_profile(records, bin_width, threads=threads),
        "day_of_month": lambda: day_of_month(records, threads),
    }
    unknown = [n for n in names if n not in makers]
    if unknown:
        raise ValueError(f"unknown table(s): {', '.join(unknown)}")
    return {n: makers[n]() for n in names}


def write_tables(tables: dict[str, StatTable], out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """One CSV per table, or one JSON report holding all of them."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        paths = []
        for name, table in tables.items():
            p = out / f"{name}.csv"
            p.write_text(table.to_csv(), encoding="utf-8")
            paths.append(p)
        return paths
    p = out / "eda_report.json"
    p.write_text(json.dumps({n: t.to_dict() for n, t in tables.items()}, indent=2, sort_keys=True) + "\n",
                 encoding="utf-8")
    return [p]
