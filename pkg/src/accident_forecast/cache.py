"""Versioned binary column store.

Layout: 8-byte magic, little-endian uint32 header length, a UTF-8 JSON
header, then one ``.npy`` blob per column in header order.
"""
from __future__ import annotations

import io
import json
import struct
from datetime import datetime
from pathlib import Path

import numpy as np

from .ingest import RECORD_FIELDS, AccidentRecord

MAGIC = b"AFCOLS\x00\x01"
VERSION = 1


class CacheError(ValueError):
    pass


def write_columns(path: str | Path, columns: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {"version": VERSION, "columns": list(columns), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in columns:
            np.save(fh, np.asarray(columns[name]), allow_pickle=False)


def read_columns(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with Path(path).open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CacheError(f"{path}: not a column cache (bad magic)")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        if header.get("version") != VERSION:
            raise CacheError(f"{path}: unsupported cache version {header.get('version')}")
        data = io.BytesIO(fh.read())
    cols = {name: np.load(data, allow_pickle=False) for name in header["columns"]}
    return cols, header["meta"]


# Records are stored column-wise. Optional values carry a companion mask so
# "absent" never collapses into a sentinel number.
_KIND = {}
for _name in RECORD_FIELDS:
    _KIND[_name] = "str"
for _name in ("start_lat", "start_lng", "distance", "end_lat", "end_lng", "temperature_f",
              "wind_chill_f", "humidity_pct", "pressure_in", "visibility_mi", "wind_speed_mph",
              "precipitation_in"):
    _KIND[_name] = "float"
for _name in ("start_time", "end_time", "weather_timestamp"):
    _KIND[_name] = "time"
for _name in ("amenity", "bump", "crossing", "give_way", "junction", "no_exit", "railway",
              "roundabout", "station", "stop", "traffic_calming", "traffic_signal", "turning_loop"):
    _KIND[_name] = "bool"
_KIND["severity"] = "int"


def write_records(path: str | Path, records: list[AccidentRecord], meta: dict | None = None) -> None:
    cols: dict[str, np.ndarray] = {}
    for name in RECORD_FIELDS:
        values = [getattr(r, name) for r in records]
        present = np.array([v is not None for v in values], dtype=bool)
        kind = _KIND[name]
        if kind == "float":
            arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
        elif kind == "time":
            arr = np.array([np.datetime64("NaT") if v is None else np.datetime64(v, "s") for v in values],
                           dtype="datetime64[s]")
        elif kind == "bool":
            arr = np.array(values, dtype=bool)
        elif kind == "int":
            arr = np.array(values, dtype=np.int64)
        else:
            arr = np.array(["" if v is None else v for v in values], dtype=str)
        cols[name] = arr
        cols[name + "__present"] = present
    write_columns(path, cols, {"kind": "records", "n": len(records), **(meta or {})})


def read_records(path: str | Path) -> tuple[list[AccidentRecord], dict]:
    cols, meta = read_columns(path)
    if meta.get("kind") != "records":
        raise CacheError(f"{path}: cache does not hold accident records")
    n = int(meta["n"])
    converted: dict[str, list] = {}
    for name in RECORD_FIELDS:
        arr = cols[name]
        present = cols[name + "__present"]
        kind = _KIND[name]
        out: list = []
        for i in range(n):
            if not present[i]:
                out.append(None)
            elif kind == "float":
                out.append(float(arr[i]))
            elif kind == "time":
                out.append(arr[i].astype(datetime))
            elif kind == "bool":
                out.append(bool(arr[i]))
            elif kind == "int":
                out.append(int(arr[i]))
            else:
                out.append(str(arr[i]))
        converted[name] = out
    records = [AccidentRecord(**{k: converted[k][i] for k in RECORD_FIELDS}) for i in range(n)]
    return records, meta
