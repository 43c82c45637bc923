"""Parsing and validation of the US accident-record snapshot.

The snapshot is a comma-separated file with one accident per row. Rows are
turned into :class:`AccidentRecord` objects; anything that breaks the record
invariants is either rejected (lenient mode) or aborts the parse (strict
mode).
"""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime
from itertools import islice
from pathlib import Path

logger = logging.getLogger(__name__)

# Raw header name -> record attribute. Order is the canonical column order
# used when writing rows back out.
COLUMNS: dict[str, str] = {
    "ID": "id",
    "Severity": "severity",
    "Start_Time": "start_time",
    "End_Time": "end_time",
    "Start_Lat": "start_lat",
    "Start_Lng": "start_lng",
    "End_Lat": "end_lat",
    "End_Lng": "end_lng",
    "Distance(mi)": "distance",
    "Description": "description",
    "Number": "number",
    "Street": "street",
    "Side": "side",
    "City": "city",
    "County": "county",
    "State": "state",
    "Zipcode": "zipcode",
    "Country": "country",
    "Timezone": "timezone",
    "Airport_Code": "airport_code",
    "Weather_Timestamp": "weather_timestamp",
    "Temperature(F)": "temperature_f",
    "Wind_Chill(F)": "wind_chill_f",
    "Humidity(%)": "humidity_pct",
    "Pressure(in)": "pressure_in",
    "Visibility(mi)": "visibility_mi",
    "Wind_Direction": "wind_direction",
    "Wind_Speed(mph)": "wind_speed_mph",
    "Precipitation(in)": "precipitation_in",
    "Weather_Condition": "weather_condition",
    "Amenity": "amenity",
    "Bump": "bump",
    "Crossing": "crossing",
    "Give_Way": "give_way",
    "Junction": "junction",
    "No_Exit": "no_exit",
    "Railway": "railway",
    "Roundabout": "roundabout",
    "Station": "station",
    "Stop": "stop",
    "Traffic_Calming": "traffic_calming",
    "Traffic_Signal": "traffic_signal",
    "Turning_Loop": "turning_loop",
    "Sunrise_Sunset": "sunrise_sunset",
    "Civil_Twilight": "civil_twilight",
    "Nautical_Twilight": "nautical_twilight",
    "Astronomical_Twilight": "astronomical_twilight",
}
assert len(COLUMNS) == 47

REQUIRED_COLUMNS = ("ID", "Severity", "Start_Time", "End_Time", "Start_Lat", "Start_Lng", "State")

# Parsed but not carried on the record.
IGNORED_COLUMNS = ("Description",)

OPTIONAL_STR = ("number", "street", "side", "city", "county", "zipcode", "country",
                "timezone", "airport_code")
OPTIONAL_FLOAT = ("end_lat", "end_lng", "temperature_f", "wind_chill_f", "humidity_pct",
                  "pressure_in", "visibility_mi", "wind_speed_mph", "precipitation_in")
CATEGORICAL = ("wind_direction", "weather_condition")
BOOLEAN = ("amenity", "bump", "crossing", "give_way", "junction", "no_exit", "railway",
           "roundabout", "station", "stop", "traffic_calming", "traffic_signal",
           "turning_loop")
TWILIGHT = ("sunrise_sunset", "civil_twilight", "nautical_twilight", "astronomical_twilight")

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


class SchemaError(ValueError):
    """The file header cannot be mapped onto the accident schema."""


class RecordError(ValueError):
    """A row failed validation in strict mode."""

    def __init__(self, row_number: int, violations: list[str]):
        self.row_number = row_number
        self.violations = violations
        super().__init__(f"row {row_number}: {'; '.join(violations)}")


@dataclass(frozen=True)
class AccidentRecord:
    id: str
    severity: int
    start_time: datetime
    end_time: datetime
    start_lat: float
    start_lng: float
    state: str
    distance: float | None = None
    end_lat: float | None = None
    end_lng: float | None = None
    number: str | None = None
    street: str | None = None
    side: str | None = None
    city: str | None = None
    county: str | None = None
    zipcode: str | None = None
    country: str | None = None
    timezone: str | None = None
    airport_code: str | None = None
    weather_timestamp: datetime | None = None
    temperature_f: float | None = None
    wind_chill_f: float | None = None
    humidity_pct: float | None = None
    pressure_in: float | None = None
    visibility_mi: float | None = None
    wind_speed_mph: float | None = None
    precipitation_in: float | None = None
    wind_direction: str | None = None
    weather_condition: str | None = None
    amenity: bool = False
    bump: bool = False
    crossing: bool = False
    give_way: bool = False
    junction: bool = False
    no_exit: bool = False
    railway: bool = False
    roundabout: bool = False
    station: bool = False
    stop: bool = False
    traffic_calming: bool = False
    traffic_signal: bool = False
    turning_loop: bool = False
    sunrise_sunset: str | None = None
    civil_twilight: str | None = None
    nautical_twilight: str | None = None
    astronomical_twilight: str | None = None


RECORD_FIELDS = tuple(f.name for f in fields(AccidentRecord))


@dataclass
class IngestSummary:
    rows_read: int = 0
    rows_accepted: int = 0
    rows_rejected: int = 0
    missing: dict[str, int] = field(default_factory=dict)
    min_start_time: datetime | None = None
    max_start_time: datetime | None = None
    rejected: list[tuple[int, str]] = field(default_factory=list)
    absent_columns: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_accepted": self.rows_accepted,
            "rows_rejected": self.rows_rejected,
            "missing": dict(sorted(self.missing.items())),
            "min_start_time": _fmt_time(self.min_start_time),
            "max_start_time": _fmt_time(self.max_start_time),
            "absent_columns": list(self.absent_columns),
        }


def parse_timestamp(text: str) -> datetime:
    """Parse ``YYYY-MM-DD HH:MM:SS[.fff...]`` as naive local time.

    Fractional seconds are truncated.
    """
    text = text.strip()
    head, _, frac = text.partition(".")
    if frac and not frac.isdigit():
        raise ValueError(f"bad timestamp {text!r}")
    if len(head) == 10:
        return datetime.strptime(head, "%Y-%m-%d")
    return datetime.strptime(head, TIME_FORMAT)


def _fmt_time(ts: datetime | None) -> str | None:
    return None if ts is None else ts.strftime(TIME_FORMAT)


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(f"not a boolean: {text!r}")


def validate_record(raw: Mapping[str, str]) -> AccidentRecord | list[str]:
    """Type a raw row. Returns the record, or the list of violations.

    Keys are the raw header names. Empty strings mean "absent".
    """
    violations: list[str] = []
    values: dict[str, object] = {}

    def get(col: str) -> str:
        v = raw.get(col)
        return "" if v is None else v.strip()

    for col in REQUIRED_COLUMNS:
        if not get(col):
            violations.append(f"{COLUMNS[col]} missing (required)")
    if violations:
        return violations

    values["id"] = get("ID")
    values["state"] = get("State")
    if len(values["state"]) != 2 or not values["state"].isalpha():
        violations.append("state not a 2-letter code")

    try:
        sev = int(get("Severity"))
        if sev not in (1, 2, 3, 4):
            violations.append("severity out of range {1..4}")
        values["severity"] = sev
    except ValueError:
        violations.append("severity not an integer")

    for col in ("Start_Time", "End_Time"):
        try:
            values[COLUMNS[col]] = parse_timestamp(get(col))
        except ValueError:
            violations.append(f"{COLUMNS[col]} unparseable timestamp")

    for col, lo, hi in (("Start_Lat", -90.0, 90.0), ("Start_Lng", -180.0, 180.0)):
        name = COLUMNS[col]
        try:
            v = _parse_float(get(col))
            if not lo <= v <= hi:
                violations.append(f"{name} outside [{lo:g},{hi:g}]")
            values[name] = v
        except ValueError:
            violations.append(f"{name} not a number")

    for col, name in COLUMNS.items():
        if col in REQUIRED_COLUMNS or col in IGNORED_COLUMNS:
            continue
        text = get(col)
        if name == "distance" or name in OPTIONAL_FLOAT:
            if not text:
                values[name] = None
                continue
            try:
                values[name] = _parse_float(text)
            except ValueError:
                violations.append(f"{name} not a number")
        elif name == "weather_timestamp":
            if not text:
                values[name] = None
                continue
            try:
                values[name] = parse_timestamp(text)
            except ValueError:
                violations.append(f"{name} unparseable timestamp")
        elif name in BOOLEAN:
            if not text:
                values[name] = False
                continue
            try:
                values[name] = _parse_bool(text)
            except ValueError:
                violations.append(f"{name} not True/False")
        elif name in TWILIGHT:
            if text and text not in ("Day", "Night"):
                violations.append(f"{name} not Day/Night")
            values[name] = text or None
        else:
            values[name] = text or None

    if "start_time" in values and "end_time" in values:
        if values["start_time"] > values["end_time"]:
            violations.append("start_time > end_time")
    hum = values.get("humidity_pct")
    if hum is not None and not 0.0 <= hum <= 100.0:
        violations.append("humidity_pct > 100" if hum > 100 else "humidity_pct < 0")
    dist = values.get("distance")
    if dist is not None and dist < 0:
        violations.append("distance < 0")

    if violations:
        return violations
    return AccidentRecord(**values)


def _fmt_float(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def record_to_row(rec: AccidentRecord) -> dict[str, str]:
    """Serialize a record back into a raw row keyed by header name."""
    row: dict[str, str] = {}
    for col, name in COLUMNS.items():
        if col in IGNORED_COLUMNS:
            row[col] = ""
            continue
        v = getattr(rec, name)
        if v is None:
            row[col] = ""
        elif isinstance(v, bool):
            row[col] = "True" if v else "False"
        elif isinstance(v, datetime):
            row[col] = v.strftime(TIME_FORMAT)
        elif isinstance(v, float):
            row[col] = _fmt_float(v)
        else:
            row[col] = str(v)
    return row


def check_header(header: Iterable[str]) -> list[str]:
    """Validate a header row; return the schema columns it lacks.

    Raises SchemaError if any required column is missing.
    """
    present = {h.strip() for h in header}
    missing_required = [c for c in REQUIRED_COLUMNS if c not in present]
    if missing_required:
        raise SchemaError(f"missing required column(s): {', '.join(missing_required)}")
    return [c for c in COLUMNS if c not in present]


def _validate_chunk(chunk: list[tuple[int, dict[str, str]]]):
    return [(n, validate_record(row)) for n, row in chunk]


def _chunks(it: Iterator, size: int) -> Iterator[list]:
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield block


def iter_snapshot(path: str | Path, mode: str = "lenient", summary: IngestSummary | None = None,
                  threads: int = 1, chunk_size: int = 2048) -> Iterator[AccidentRecord]:
    """Stream records from a snapshot file, filling ``summary`` as it goes.

    Row numbers are 1-based data-row indices (the header is row 0).
    Validation runs chunk-parallel when ``threads > 1``; records come out
    in file order regardless.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown mode {mode!r}")
    if summary is None:
        summary = IngestSummary()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty file: no header row")
        summary.absent_columns = check_header(reader.fieldnames)
        if summary.absent_columns:
            logger.warning("columns absent from header, treated as empty: %s",
                           ", ".join(summary.absent_columns))
        numbered = enumerate(reader, start=1)
        blocks = _chunks(numbered, chunk_size)
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        try:
            results = pool.map(_validate_chunk, blocks) if pool else map(_validate_chunk, blocks)
            for block in results:
                for row_number, outcome in block:
                    summary.rows_read += 1
                    if isinstance(outcome, list):
                        if mode == "strict":
                            raise RecordError(row_number, outcome)
                        summary.rows_rejected += 1
                        summary.rejected.append((row_number, "; ".join(outcome)))
                        continue
                    _account(summary, outcome)
                    yield outcome
        finally:
            if pool:
                pool.shutdown(wait=True, cancel_futures=True)


def _account(summary: IngestSummary, rec: AccidentRecord) -> None:
    summary.rows_accepted += 1
    for name in RECORD_FIELDS:
        if getattr(rec, name) is None:
            summary.missing[name] = summary.missing.get(name, 0) + 1
    if summary.min_start_time is None or rec.start_time < summary.min_start_time:
        summary.min_start_time = rec.start_time
    if summary.max_start_time is None or rec.start_time > summary.max_start_time:
        summary.max_start_time = rec.start_time


def parse_snapshot(path: str | Path, mode: str = "lenient",
                   threads: int = 1) -> tuple[list[AccidentRecord], IngestSummary]:
    """Parse a whole snapshot into memory."""
    summary = IngestSummary()
    records = list(iter_snapshot(path, mode=mode, summary=summary, threads=threads))
    return records, summary


def write_snapshot(records: Iterable[AccidentRecord], path: str | Path) -> None:
    """Write records as a snapshot CSV with the full 47-column header."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(COLUMNS))
        writer.writeheader()
        for rec in records:
            writer.writerow(record_to_row(rec))


def write_rejects(summary: IngestSummary, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "reason"])
        writer.writerows(summary.rejected)
