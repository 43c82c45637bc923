"""Count-regression datasets built from accident records.

Records are tallied into (spatial cell, time bucket) counts, the counts are
joined with calendar, weather and history features, and the result is split
into train/test frames without leaking test targets into any encoding.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import cache
from .ingest import AccidentRecord

WEATHER_FIELDS = ("temperature_f", "humidity_pct", "pressure_in", "visibility_mi",
                  "wind_speed_mph", "precipitation_in")
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
CELL_SCHEMES = ("state", "city", "grid")
KINDS = ("numeric", "one-hot", "target-encoded", "cyclic")

FRAME_FORMAT = "accident-forecast/frame"
FRAME_VERSION = 1


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- aggregation

@dataclass
class CellSeries:
    """Accident counts per (cell, bucket), sorted by cell then bucket."""

    cell_ids: np.ndarray
    bucket_starts: np.ndarray  # datetime64[s]
    counts: np.ndarray
    bucket_hours: int
    excluded: int = 0

    def __len__(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def cell_key(rec: AccidentRecord, scheme: str = "city", grid_resolution: float = 0.1) -> str:
    if scheme == "state":
        return rec.state
    if scheme == "city":
        return f"{rec.state}/{rec.city or '?'}"
    if scheme == "grid":
        i = math.floor(rec.start_lat / grid_resolution)
        j = math.floor(rec.start_lng / grid_resolution)
        return f"g{grid_resolution:g}:{i}:{j}"
    raise DatasetError(f"unknown cell scheme {scheme!r}")


def check_bucket_hours(bucket_hours: int) -> None:
    if bucket_hours < 1 or 24 % bucket_hours:
        raise DatasetError(f"bucket length {bucket_hours}h does not divide 24h")


def bucket_start(ts: datetime, bucket_hours: int) -> datetime:
    return datetime(ts.year, ts.month, ts.day, (ts.hour // bucket_hours) * bucket_hours)


def _in_range(ts: datetime, date_range) -> bool:
    if date_range is None:
        return True
    lo, hi = date_range
    return (lo is None or ts >= lo) and (hi is None or ts < hi)


def aggregate_counts(records, cell_scheme: str = "city", bucket_hours: int = 24,
                     zero_fill: bool = True, date_range=None,
                     grid_resolution: float = 0.1) -> CellSeries:
    """Tally records into (cell, bucket) counts.

    With ``zero_fill`` every cell that has at least one record gets a row for
    every bucket of the global time range. ``date_range`` is a half-open
    ``(start, end)`` pair; records outside it are counted in ``excluded``.
    """
    check_bucket_hours(bucket_hours)
    if cell_scheme not in CELL_SCHEMES:
        raise DatasetError(f"unknown cell scheme {cell_scheme!r}")
    tally: Counter = Counter()
    excluded = 0
    for rec in records:
        if not _in_range(rec.start_time, date_range):
            excluded += 1
            continue
        tally[cell_key(rec, cell_scheme, grid_resolution), bucket_start(rec.start_time, bucket_hours)] += 1
    if not tally:
        return CellSeries(np.array([], dtype=str), np.array([], dtype="datetime64[s]"),
                          np.array([], dtype=np.int64), bucket_hours, excluded)
    cells = sorted({c for c, _ in tally})
    if zero_fill:
        first = min(b for _, b in tally)
        last = max(b for _, b in tally)
        step = timedelta(hours=bucket_hours)
        n_b = int((last - first) / step) + 1
        grid = [first + k * step for k in range(n_b)]
        keys = [(c, b) for c in cells for b in grid]
    else:
        keys = sorted(tally)
    return CellSeries(
        cell_ids=np.array([c for c, _ in keys], dtype=str),
        bucket_starts=np.array([np.datetime64(b, "s") for _, b in keys], dtype="datetime64[s]"),
        counts=np.array([tally.get(k, 0) for k in keys], dtype=np.int64),
        bucket_hours=bucket_hours,
        excluded=excluded,
    )


# ------------------------------------------------------------------- frames

@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    group: str | None = None


@dataclass
class FeatureFrame:
    matrix: np.ndarray
    columns: list[Column]
    targets: np.ndarray
    cell_ids: np.ndarray
    bucket_starts: np.ndarray
    categoricals: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.columns):
            raise DatasetError("column count does not match metadata")
        n = self.matrix.shape[0]
        for arr in (self.targets, self.cell_ids, self.bucket_starts, *self.categoricals.values()):
            if arr.shape[0] != n:
                raise DatasetError("row-aligned arrays disagree in length")

    @property
    def n_rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        return self.column_names.index(name)

    def take(self, idx) -> "FeatureFrame":
        idx = np.asarray(idx)
        return FeatureFrame(
            matrix=self.matrix[idx], columns=list(self.columns), targets=self.targets[idx],
            cell_ids=self.cell_ids[idx], bucket_starts=self.bucket_starts[idx],
            categoricals={k: v[idx] for k, v in self.categoricals.items()},
            meta=json.loads(json.dumps(self.meta)),
        )

    def schema_fingerprint(self) -> str:
        blob = json.dumps([asdict(c) for c in self.columns], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def data_fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.schema_fingerprint().encode())
        h.update(np.ascontiguousarray(self.matrix, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.targets, dtype=np.float64).tobytes())
        h.update("\x00".join(self.cell_ids.tolist()).encode())
        h.update(self.bucket_starts.astype("datetime64[s]").astype(np.int64).tobytes())
        return h.hexdigest()[:16]


@dataclass
class FeatureConfig:
    lags: tuple[int, ...] = (1, 2)
    lag_hours: tuple[int, ...] = (24,)
    top_k: int = 10
    smoothing: float = 20.0
    te_folds: int = 5
    seed: int = 42


# ----------------------------------------------------------- target encoding

def fold_ids_random(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.arange(n)[rng.permutation(n)] % k


def encoding_table(categories, targets, smoothing: float, prior: float | None = None):
    """Smoothed category means: ``prior + n_c/(n_c+m) * (mean_c - prior)``."""
    categories = np.asarray(categories)
    targets = np.asarray(targets, dtype=float)
    prior = float(targets.mean()) if prior is None else prior
    table = {}
    for cat in np.unique(categories):
        sel = targets[categories == cat]
        n_c = sel.size
        table[str(cat)] = prior + n_c / (n_c + smoothing) * (sel.mean() - prior)
    return table, prior


def apply_encoding(categories, table: dict, prior: float) -> np.ndarray:
    return np.array([table.get(str(c), prior) for c in categories], dtype=float)


def target_encode(column, targets, folds: int = 5, seed: int = 0, smoothing: float = 20.0,
                  fold_ids=None) -> np.ndarray:
    """Out-of-fold smoothed target encoding.

    Row ``i`` in fold ``k`` is encoded from the rows outside fold ``k``: the
    category's mean there, shrunk toward the mean of those same rows by
    ``n_c / (n_c + smoothing)``, then re-centred on the global mean. A
    single-level column therefore encodes to the global mean exactly, as do
    categories absent from the other folds.
    """
    if folds < 2:
        raise DatasetError("target encoding needs at least 2 folds")
    column = np.asarray(column)
    targets = np.asarray(targets, dtype=float)
    n = targets.size
    if fold_ids is None:
        fold_ids = fold_ids_random(n, folds, seed)
    fold_ids = np.asarray(fold_ids)
    mu = float(targets.mean())
    out = np.full(n, mu)
    for k in np.unique(fold_ids):
        inside = fold_ids == k
        other = ~inside
        if not other.any():
            continue
        table, prior = encoding_table(column[other], targets[other], smoothing)
        enc = apply_encoding(column[inside], table, prior)
        out[inside] = mu + (enc - prior)
    return out


# ------------------------------------------------------ feature engineering

def _group_rows(series: CellSeries, records, scheme: str, grid_resolution: float):
    """Map each record to its series row (or -1)."""
    pos = {(c, b): i for i, (c, b) in enumerate(zip(series.cell_ids.tolist(),
                                                   series.bucket_starts.astype(datetime).tolist()))}
    rows = np.full(len(records), -1, dtype=np.int64)
    for r, rec in enumerate(records):
        key = (cell_key(rec, scheme, grid_resolution), bucket_start(rec.start_time, series.bucket_hours))
        rows[r] = pos.get(key, -1)
    return rows


def _locf(values: np.ndarray, cells: np.ndarray) -> np.ndarray:
    out = values.copy()
    for i in range(1, out.size):
        if np.isnan(out[i]) and cells[i] == cells[i - 1]:
            out[i] = out[i - 1]
    return out


def _top_categories(values, k: int) -> list[str]:
    counts = Counter(v for v in values if v is not None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:k]]


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower() or "x"


def engineer_features(series: CellSeries, records, config: FeatureConfig = FeatureConfig(),
                      cell_scheme: str = "city", grid_resolution: float = 0.1) -> FeatureFrame:
    """Build the supervised frame: one row per (cell, bucket) after warm-up.

    The first ``max_lag`` buckets of the global range are dropped because
    their lag features would reach before the data.
    """
    n = len(series)
    if n == 0:
        raise DatasetError("empty series")
    bh = series.bucket_hours
    records = list(records)
    lag_set = set(config.lags)
    for lh in config.lag_hours:
        if lh % bh == 0:
            lag_set.add(lh // bh)
    lags = sorted(l for l in lag_set if l >= 1)
    max_lag = max(lags, default=0)

    cells = series.cell_ids
    starts = series.bucket_starts
    origin = starts.min()
    step = np.timedelta64(bh * 3600, "s")
    bidx = ((starts - origin) // step).astype(np.int64)
    last_idx = {}
    for c, b in zip(cells.tolist(), bidx.tolist()):
        last_idx[c] = max(last_idx.get(c, -1), b)
    for c in sorted(last_idx):
        if last_idx[c] + 1 <= max_lag:
            raise DatasetError(f"lag of {max_lag} buckets is longer than the series of cell {c!r}")

    # per-row record membership
    rec_rows = _group_rows(series, records, cell_scheme, grid_resolution)
    member = rec_rows >= 0

    weather = {}
    for name in WEATHER_FIELDS:
        vals = np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records],
                        dtype=float)
        ok = member & ~np.isnan(vals)
        sums = np.bincount(rec_rows[ok], weights=vals[ok], minlength=n)
        cnts = np.bincount(rec_rows[ok], minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            col = np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)
        col = _locf(col, cells)
        finite = vals[member & ~np.isnan(vals)]
        median = float(np.median(finite)) if finite.size else 0.0
        weather[name] = np.where(np.isnan(col), median, col)

    conds = [r.weather_condition for r in records]
    top = _top_categories([c for c, m in zip(conds, member) if m], config.top_k)
    per_row: list[Counter] = [Counter() for _ in range(n)]
    for r, c in zip(rec_rows.tolist(), conds):
        if r >= 0 and c is not None:
            per_row[r][c if c in top else "Other"] += 1
    cond_row = []
    prev_cell, prev_cond = None, None
    for i in range(n):
        if per_row[i]:
            best = sorted(per_row[i].items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        elif cells[i] == prev_cell and prev_cond is not None:
            best = prev_cond
        else:
            best = "Other"
        cond_row.append(best)
        prev_cell, prev_cond = cells[i], best
    cond_levels = top + ["Other"]

    # lag lookups by (cell, bucket index); absent buckets count zero
    counts = series.counts.astype(float)
    lookup = {(c, b): v for c, b, v in zip(cells.tolist(), bidx.tolist(), counts.tolist())}
    keep = bidx >= max_lag

    dt = starts.astype(datetime)
    hours = np.array([t.hour for t in dt], dtype=float)
    months = np.array([t.month for t in dt], dtype=float)
    dows = np.array([t.weekday() for t in dt])
    years = np.array([t.year for t in dt], dtype=float)

    cols: list[Column] = []
    data: list[np.ndarray] = []

    def add(col: Column, values):
        cols.append(col)
        data.append(np.asarray(values, dtype=float))

    add(Column("hour_sin", "cyclic", "hour"), np.sin(2 * np.pi * hours / 24))
    add(Column("hour_cos", "cyclic", "hour"), np.cos(2 * np.pi * hours / 24))
    add(Column("month_sin", "cyclic", "month"), np.sin(2 * np.pi * (months - 1) / 12))
    add(Column("month_cos", "cyclic", "month"), np.cos(2 * np.pi * (months - 1) / 12))
    for k, day in enumerate(WEEKDAYS):
        add(Column(f"dow_{day.lower()}", "one-hot", "dow"), dows == k)
    add(Column("year", "numeric"), years)
    for name in WEATHER_FIELDS:
        add(Column(name, "numeric"), weather[name])
    cond_arr = np.array(cond_row, dtype=str)
    for level in cond_levels:
        add(Column(f"wc_{_slug(level)}", "one-hot", "weather_condition"), cond_arr == level)
    for lag in lags:
        add(Column(f"lag_{lag}", "numeric", "lag"),
            [lookup.get((c, b - lag), 0.0) for c, b in zip(cells.tolist(), bidx.tolist())])

    states = np.array([c.split("/")[0] if cell_scheme != "grid" else c for c in cells.tolist()], dtype=str)
    if cell_scheme == "grid":
        state_of_cell: dict[str, Counter] = {}
        for r, rec in zip(rec_rows.tolist(), records):
            if r >= 0:
                state_of_cell.setdefault(cells[r], Counter())[rec.state] += 1
        states = np.array([sorted(state_of_cell[c].items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
                           for c in cells.tolist()], dtype=str)

    # placeholders, filled from targets by _with_encodings
    add(Column("cell_rate", "target-encoded", "cell_id"), np.zeros(n))
    add(Column("te_state", "target-encoded", "state"), np.zeros(n))

    matrix = np.column_stack(data)[keep]
    frame = FeatureFrame(
        matrix=matrix, columns=cols, targets=counts[keep], cell_ids=cells[keep],
        bucket_starts=starts[keep],
        categoricals={"state": states[keep], "weather_condition": cond_arr[keep]},
        meta={"bucket_hours": bh, "cell_scheme": cell_scheme, "lags": lags,
              "weather_levels": cond_levels,
              "encodings": {
                  "cell_rate": {"source": "cell_id", "smoothing": 0.0, "folds": 0},
                  "te_state": {"source": "state", "smoothing": config.smoothing,
                               "folds": config.te_folds},
              },
              "seed": config.seed},
    )
    return _with_encodings(frame, None, config.seed)


def _category_values(frame: FeatureFrame, source: str) -> np.ndarray:
    return frame.cell_ids if source == "cell_id" else frame.categoricals[source]


def _with_encodings(train: FeatureFrame, test: FeatureFrame | None, seed: int):
    """(Re)compute every target-derived column from ``train`` targets only.

    Returns the updated train frame, or ``(train, test)`` when a test frame
    is given.
    """
    train = train.take(np.arange(train.n_rows))
    if test is not None:
        test = test.take(np.arange(test.n_rows))
    specs = train.meta.get("encodings", {})
    names = train.column_names
    for name, spec in specs.items():
        col = names.index(name)
        cats = _category_values(train, spec["source"])
        table, prior = encoding_table(cats, train.targets, spec["smoothing"])
        if spec["folds"] >= 2:
            enc = target_encode(cats, train.targets, folds=spec["folds"], seed=seed,
                                smoothing=spec["smoothing"])
        else:
            enc = apply_encoding(cats, table, prior)
        train.matrix[:, col] = enc
        if test is not None:
            test.matrix[:, col] = apply_encoding(_category_values(test, spec["source"]), table, prior)
    if test is None:
        return train
    return train, test


def refit_encodings(train: FeatureFrame, test: FeatureFrame | None = None):
    """Recompute target-derived columns from ``train`` targets only."""
    return _with_encodings(train, test, train.meta.get("seed", 0))


# ------------------------------------------------------------------ splitting

@dataclass(frozen=True)
class SplitSpec:
    strategy: str = "temporal-holdout"
    test_fraction: float = 0.2
    seed: int = 42

    def __post_init__(self):
        if self.strategy not in ("temporal-holdout", "random"):
            raise DatasetError(f"unknown split strategy {self.strategy!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise DatasetError("test_fraction must be in (0, 1)")


def split_indices(frame: FeatureFrame, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n = frame.n_rows
    if n == 0:
        raise DatasetError("cannot split an empty frame")
    test = np.zeros(n, dtype=bool)
    if spec.strategy == "temporal-holdout":
        for c in np.unique(frame.cell_ids):
            rows = np.flatnonzero(frame.cell_ids == c)
            rows = rows[np.argsort(frame.bucket_starts[rows], kind="stable")]
            n_test = math.ceil(spec.test_fraction * rows.size)
            test[rows[rows.size - n_test:]] = True
    else:
        rng = np.random.default_rng(spec.seed)
        n_test = math.ceil(spec.test_fraction * n)
        test[rng.permutation(n)[:n_test]] = True
    if test.all() or not test.any():
        raise DatasetError("split leaves one side empty")
    return np.flatnonzero(~test), np.flatnonzero(test)


def split(frame: FeatureFrame, spec: SplitSpec = SplitSpec()) -> tuple[FeatureFrame, FeatureFrame]:
    """Split rows and refit target-derived columns on the train side."""
    tr, te = split_indices(frame, spec)
    train, test = frame.take(tr), frame.take(te)
    train.meta["split"] = asdict(spec)
    test.meta["split"] = asdict(spec)
    return _with_encodings(train, test, frame.meta.get("seed", spec.seed))


def fold_assignments(frame: FeatureFrame, k: int, seed: int = 0, temporal: bool = True) -> np.ndarray:
    """Fold id per row. Temporal folds are contiguous ranges of buckets."""
    n = frame.n_rows
    if k < 2:
        raise DatasetError("need at least 2 folds")
    if temporal:
        buckets = np.unique(frame.bucket_starts)
        if k > buckets.size:
            raise DatasetError(f"{k} temporal folds but only {buckets.size} distinct buckets")
        bucket_fold = np.arange(buckets.size) * k // buckets.size
        return bucket_fold[np.searchsorted(buckets, frame.bucket_starts)]
    if k > n:
        raise DatasetError(f"{k} folds for {n} rows")
    return fold_ids_random(n, k, seed)


# ---------------------------------------------------------------- persistence

def _header(frame: FeatureFrame) -> dict:
    return {"format": FRAME_FORMAT, "version": FRAME_VERSION,
            "columns": [asdict(c) for c in frame.columns],
            "categoricals": sorted(frame.categoricals), "meta": frame.meta}


def save_frame_text(frame: FeatureFrame, path: str | Path) -> None:
    """Comma-separated text, first line ``#`` + JSON column metadata."""
    header = _header(frame)
    cats = header["categoricals"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("#" + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "bucket_start", "target", *[f"cat:{c}" for c in cats], *frame.column_names])
        starts = frame.bucket_starts.astype("datetime64[s]").astype(str)
        for i in range(frame.n_rows):
            w.writerow([frame.cell_ids[i], starts[i], repr(float(frame.targets[i])),
                        *[frame.categoricals[c][i] for c in cats],
                        *[repr(float(v)) for v in frame.matrix[i]]])


def load_frame_text(path: str | Path) -> FeatureFrame:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise DatasetError(f"{path}: missing frame metadata line")
        header = json.loads(first[1:])
        if header.get("format") != FRAME_FORMAT or header.get("version") != FRAME_VERSION:
            raise DatasetError(f"{path}: unsupported frame format")
        rows = list(csv.reader(fh))
    cats = header["categoricals"]
    columns = [Column(**c) for c in header["columns"]]
    body = rows[1:]
    nc = len(cats)
    d = len(columns)
    return FeatureFrame(
        matrix=np.array([[float(v) for v in r[3 + nc:]] for r in body], dtype=float).reshape(len(body), d),
        columns=columns,
        targets=np.array([float(r[2]) for r in body], dtype=float),
        cell_ids=np.array([r[0] for r in body], dtype=str),
        bucket_starts=np.array([r[1] for r in body], dtype="datetime64[s]"),
        categoricals={c: np.array([r[3 + k] for r in body], dtype=str) for k, c in enumerate(cats)},
        meta=header["meta"],
    )


def save_frame_binary(frame: FeatureFrame, path: str | Path) -> None:
    cols = {"__matrix": frame.matrix, "__targets": frame.targets, "__cell_ids": frame.cell_ids,
            "__bucket_starts": frame.bucket_starts.astype("datetime64[s]")}
    for c, v in frame.categoricals.items():
        cols["cat:" + c] = v
    write_meta = _header(frame)
    write_meta["kind"] = "frame"
    cache.write_columns(path, cols, write_meta)


def load_frame_binary(path: str | Path) -> FeatureFrame:
    cols, meta = cache.read_columns(path)
    if meta.get("kind") != "frame":
        raise DatasetError(f"{path}: cache does not hold a feature frame")
    return FeatureFrame(
        matrix=cols["__matrix"].reshape(-1, len(meta["columns"])),
        columns=[Column(**c) for c in meta["columns"]],
        targets=cols["__targets"], cell_ids=cols["__cell_ids"],
        bucket_starts=cols["__bucket_starts"],
        categoricals={c: cols["cat:" + c] for c in meta["categoricals"]},
        meta=meta["meta"],
    )


def load_frame(path: str | Path) -> FeatureFrame:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(cache.MAGIC))
    if magic == cache.MAGIC:
        return load_frame_binary(path)
    return load_frame_text(path)
