import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from accident_forecast.dataset import (Column, FeatureFrame, aggregate_counts, engineer_features,  # noqa: E402
                                      split)
from accident_forecast.fixture import fixture_path  # noqa: E402
from accident_forecast.ingest import AccidentRecord, parse_snapshot  # noqa: E402


def make_record(i=0, when="2021-03-05 17:10:00", state="CA", city="Los Angeles", **kw):
    start = datetime.fromisoformat(when)
    base = dict(id=f"T-{i}", severity=2, start_time=start, end_time=start, start_lat=34.0,
                start_lng=-118.2, state=state, city=city)
    base.update(kw)
    return AccidentRecord(**base)


def make_frame(X, y, cells=None):
    """Plain numeric frame with one daily bucket per row."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    cells = np.array(["c0"] * n if cells is None else cells, dtype=object)
    starts = np.datetime64("2021-01-01T00:00:00") + np.arange(n) * np.timedelta64(1, "D")
    cols = [Column(f"x{j}", "numeric") for j in range(X.shape[1])]
    return FeatureFrame(X, cols, np.asarray(y, dtype=float), cells, starts.astype("datetime64[s]"))


@pytest.fixture(scope="session")
def fixture_records():
    recs, summary = parse_snapshot(fixture_path())
    return recs


@pytest.fixture(scope="session")
def fixture_frame(fixture_records):
    return engineer_features(aggregate_counts(fixture_records), fixture_records)


@pytest.fixture(scope="session")
def fixture_split(fixture_frame):
    return split(fixture_frame)
