import json
import random

import numpy as np
import pytest

from accident_forecast.eda import (TABLES, WEEKDAYS, compute_tables, day_of_month, frequency_series,
                                   hourly_histogram, state_counts, weekday_shares, windspeed_profile,
                                   write_tables)
from conftest import make_record


def recs_at(*whens, **kw):
    return [make_record(i, w, **kw) for i, w in enumerate(whens)]


def test_state_counts_rank():
    recs = [make_record(i, state=s) for i, s in enumerate(["CA"] * 4 + ["FL"] * 3 + ["TX"] * 3)]
    t = state_counts(recs)
    assert t.keys == ["CA", "FL", "TX"]
    assert t.ranked()[0] == ("CA", 4)
    assert state_counts([]).keys == [] and state_counts([]).total == 0


def test_hourly_all_at_five_pm():
    t = hourly_histogram(recs_at("2021-03-05 17:01:00", "2021-03-06 17:59:00"))
    assert len(t.keys) == 24 and t.shares[17] == 1.0


def test_hourly_uniform_timestamps():
    rng = random.Random(0)
    recs = recs_at(*[f"2021-03-05 {rng.randrange(24):02d}:00:00" for _ in range(4800)])
    assert np.max(np.abs(hourly_histogram(recs).shares - 1 / 24)) < 0.015


def test_daily_counts():
    t = frequency_series(recs_at("2020-01-01 08:00:00", "2020-01-01 09:00:00", "2020-01-02 10:00:00"), "daily")
    assert t.keys == ["2020-01-01", "2020-01-02"] and t.counts.tolist() == [2, 1]


def test_monthly_zero_fill():
    t = frequency_series(recs_at("2020-01-15 08:00:00", "2020-03-02 09:00:00"), "monthly")
    assert t.keys == ["2020-01", "2020-02", "2020-03"] and t.counts.tolist() == [1, 0, 1]


def test_yearly_and_bad_granularity():
    t = frequency_series(recs_at("2019-06-01 08:00:00", "2021-06-01 08:00:00"), "yearly")
    assert t.keys == [2019, 2020, 2021] and t.counts.tolist() == [1, 0, 1]
    with pytest.raises(ValueError):
        frequency_series([], "weekly")


def test_one_record_per_weekday():
    t = weekday_shares(recs_at(*[f"2021-03-{d:02d} 12:00:00" for d in range(1, 8)]))
    assert t.keys == list(WEEKDAYS)
    assert np.all(t.shares == 1 / 7)


def test_friday_share_four_of_fourteen():
    # 2021-03-05 is a Friday
    fridays = ["2021-03-05 08:00:00", "2021-03-12 08:00:00", "2021-03-19 08:00:00", "2021-03-26 08:00:00"]
    others = [f"2021-03-{d:02d} 08:00:00" for d in (1, 2, 3, 4, 6, 7, 8, 9, 10, 11)]
    t = weekday_shares(recs_at(*fridays, *others))
    assert t.shares[WEEKDAYS.index("Fri")] == 4 / 14


def test_day_of_month_rows():
    t = day_of_month(recs_at("2021-03-31 08:00:00"))
    assert len(t.keys) == 31 and t.counts[30] == 1


def test_wind_missing_excluded():
    recs = [make_record(0, wind_speed_mph=None), make_record(1, wind_speed_mph=3.5),
            make_record(2, wind_speed_mph=75.0)]
    t = windspeed_profile(recs)
    assert t.excluded == 1 and t.total == 2
    assert t.keys[3] == "3-4" and t.keys[-1] == "60+" and t.counts[-1] == 1


def test_wind_all_zero_single_bin():
    t = windspeed_profile([make_record(i, wind_speed_mph=0.0) for i in range(5)], bin_width=2.0)
    assert t.keys == ["0-2"] and t.counts.tolist() == [5]


def test_wind_bad_width():
    with pytest.raises(ValueError):
        windspeed_profile([], bin_width=0.0)


def test_conservation_and_shares(fixture_records):
    tables = compute_tables(fixture_records, TABLES)
    for t in tables.values():
        assert t.total + t.excluded == len(fixture_records)
        assert abs(t.shares.sum() - 1) < 1e-9
        assert len(set(t.keys)) == len(t.keys)


def test_weekday_permutation_invariant(fixture_records):
    shuffled = list(fixture_records)
    random.Random(3).shuffle(shuffled)
    assert weekday_shares(shuffled).to_csv() == weekday_shares(fixture_records).to_csv()


def test_threads_byte_identical(tmp_path, fixture_records):
    many = fixture_records * 25  # several tally chunks
    a = write_tables(compute_tables(many), tmp_path / "a")
    b = write_tables(compute_tables(many, threads=4), tmp_path / "b")
    assert [p.name for p in a] == [f"{n}.csv" for n in TABLES]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_report_format(tmp_path, fixture_records):
    [p] = write_tables(compute_tables(fixture_records, ["weekday", "state"]), tmp_path, "report")
    data = json.loads(p.read_text())
    assert set(data) == {"weekday", "state"} and data["weekday"]["keys"] == list(WEEKDAYS)


def test_unknown_table():
    with pytest.raises(ValueError):
        compute_tables([], ["weekly"])
