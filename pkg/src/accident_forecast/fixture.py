"""Synthetic stand-in for the accident snapshot.

Generates a fixed-seed snapshot whose daily counts per city depend
non-linearly on weather on top of a weekday profile. The bundled file
``data/fixture_5000.csv`` is ``generate_fixture()`` written with
``write_snapshot``.
"""
from __future__ import annotations

from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path

import numpy as np

from .ingest import AccidentRecord, write_snapshot

FIXTURE_ROWS = 5000
FIXTURE_SEED = 20160208
FIXTURE_NAME = "fixture_5000.csv"

# city, county, state, zipcode, timezone, airport, lat, lng, base rate, mean temp (F)
CITIES = [
    ("Los Angeles", "Los Angeles", "CA", "90012", "US/Pacific", "KCQT", 34.05, -118.24, 4.0, 58.0),
    ("Sacramento", "Sacramento", "CA", "95814", "US/Pacific", "KSAC", 38.58, -121.49, 4.0, 50.0),
    ("San Diego", "San Diego", "CA", "92101", "US/Pacific", "KSAN", 32.72, -117.16, 4.0, 60.0),
    ("Miami", "Miami-Dade", "FL", "33130", "US/Eastern", "KMIA", 25.76, -80.19, 4.0, 72.0),
    ("Orlando", "Orange", "FL", "32801", "US/Eastern", "KMCO", 28.54, -81.38, 4.0, 64.0),
    ("Houston", "Harris", "TX", "77002", "US/Central", "KHOU", 29.76, -95.37, 4.0, 40.0),
    ("Minneapolis", "Hennepin", "MN", "55401", "US/Central", "KMSP", 44.98, -93.27, 4.0, 24.0),
    ("Denver", "Denver", "CO", "80202", "US/Mountain", "KDEN", 39.74, -104.99, 4.0, 32.0),
]

START = datetime(2021, 1, 1)
N_DAYS = 120

# Monday..Sunday
WEEKDAY_FACTOR = np.array([0.85, 0.95, 1.0, 1.05, 1.15, 0.75, 0.6])

# Relative hourly intensity: low 3-5 am, peaks at 7-8 am and 4-6 pm.
HOUR_PROFILE = np.array([1.2, 0.9, 0.7, 0.5, 0.45, 0.5, 1.5, 3.2, 3.6, 2.6, 2.3, 2.4,
                         2.6, 2.8, 3.2, 4.0, 4.6, 4.9, 4.4, 2.8, 2.1, 1.8, 1.6, 1.4])
HOUR_PROFILE = HOUR_PROFILE / HOUR_PROFILE.sum()

STREETS = ["I-5 N", "I-10 E", "Main St", "Broadway", "US-101 S", "Oak Ave", "5th St", "Highway 1"]
WIND_DIRS = ["N", "NE", "E", "SE", "S", "SW", "W", "NW", "CALM", "VAR"]
DRY_CONDITIONS = ["Fair", "Clear", "Cloudy", "Partly Cloudy", "Mostly Cloudy", "Overcast"]


def _daily_weather(rng: np.random.Generator):
    n_c = len(CITIES)
    days = np.arange(N_DAYS)
    season = -6.0 * np.cos(2 * np.pi * (days - 15) / 365.0)  # cold mid-January
    temp = np.empty((n_c, N_DAYS))
    for c, city in enumerate(CITIES):
        noise = np.zeros(N_DAYS)
        for t in range(N_DAYS):
            noise[t] = (0.7 * noise[t - 1] if t else 0.0) + rng.normal(0, 6.0)
        temp[c] = city[9] + season + noise
    rain = rng.random((n_c, N_DAYS)) < 0.28
    precip = np.where(rain, rng.exponential(0.35, (n_c, N_DAYS)), 0.0)
    fog = rng.random((n_c, N_DAYS)) < 0.12
    visibility = np.where(fog, rng.uniform(0.2, 3.0, (n_c, N_DAYS)),
                          np.where(rain, rng.uniform(3.0, 9.0, (n_c, N_DAYS)), 10.0))
    humidity = np.clip(55 + 30 * rain + 15 * fog + rng.normal(0, 8, (n_c, N_DAYS)), 5, 100)
    pressure = 29.9 - 0.3 * rain + rng.normal(0, 0.15, (n_c, N_DAYS))
    wind = rng.gamma(2.0, 3.5, (n_c, N_DAYS)) + 6.0 * rain
    return temp, precip, visibility, humidity, pressure, wind


def _bump(x, centre, width):
    return np.exp(-(((x - centre) / width) ** 2))


def _intensity(temp, precip, visibility, humidity, wind):
    """Daily rate per city: base x weekday x exp(weather score).

    The score is non-monotone in temperature (peaks near freezing), wind and
    humidity, and has one sharp interaction: fog on mild days.
    """
    base = np.array([c[8] for c in CITIES])[:, None]
    dows = np.array([(START + timedelta(days=int(t))).weekday() for t in range(N_DAYS)])
    score = (0.7 * _bump(temp, 32.0, 8.0) + 0.5 * np.exp(-visibility / 1.5)
             + 0.5 * _bump(wind, 18.0, 5.0) + 0.4 * _bump(humidity, 85.0, 8.0)
             + 0.4 * np.minimum(precip, 1.0) + 1.0 * ((visibility < 2.0) & (temp > 45.0)))
    return base * WEEKDAY_FACTOR[dows][None, :] * np.exp(score)


def _condition(temp, precip, vis, rng) -> str:
    if precip > 0.15 and temp < 30:
        return "Snow"
    if precip > 0.6:
        return "Heavy Rain"
    if precip > 0.15:
        return "Rain"
    if precip > 0:
        return "Light Rain"
    if vis < 2.0:
        return "Fog"
    if vis < 4.0:
        return "Haze"
    return DRY_CONDITIONS[rng.integers(len(DRY_CONDITIONS))]


def generate_fixture(n_rows: int = FIXTURE_ROWS, seed: int = FIXTURE_SEED) -> list[AccidentRecord]:
    """Deterministic synthetic records sorted by start time."""
    rng = np.random.default_rng(seed)
    temp, precip, vis, hum, pres, wind = _daily_weather(rng)
    lam = _intensity(temp, precip, vis, hum, wind)
    counts = rng.multinomial(n_rows, (lam / lam.sum()).ravel()).reshape(lam.shape)

    events = []
    for c in range(len(CITIES)):
        for t in range(N_DAYS):
            for _ in range(counts[c, t]):
                hour = int(rng.choice(24, p=HOUR_PROFILE))
                second = int(rng.integers(3600))
                events.append((START + timedelta(days=t, hours=hour, seconds=second), c, t))
    events.sort(key=lambda e: (e[0], e[1]))

    records = []
    for k, (start, c, t) in enumerate(events, start=1):
        city, county, state, zipcode, tz, airport, lat, lng, _, _ = CITIES[c]
        duration = timedelta(minutes=int(rng.integers(15, 360)))
        temp_r = round(float(temp[c, t] + rng.normal(0, 1.5)), 1)
        p = float(precip[c, t])
        precip_r = None if rng.random() < 0.15 else round(p + (abs(rng.normal(0, 0.01)) if p else 0.0), 2)
        wind_r = None if rng.random() < 0.05 else round(float(max(0.0, wind[c, t] + rng.normal(0, 1.0))), 1)
        wind_chill = None if rng.random() < 0.3 else round(temp_r - (wind_r or 0.0) * 0.4, 1)
        hour = start.hour
        day = 6 <= hour < 18
        records.append(AccidentRecord(
            id=f"F-{k:06d}",
            severity=int(rng.choice([1, 2, 3, 4], p=[0.05, 0.8, 0.1, 0.05])),
            start_time=start,
            end_time=start + duration,
            start_lat=round(lat + rng.normal(0, 0.05), 6),
            start_lng=round(lng + rng.normal(0, 0.05), 6),
            state=state,
            distance=round(float(rng.exponential(0.6)), 3),
            end_lat=None if rng.random() < 0.4 else round(lat + rng.normal(0, 0.05), 6),
            end_lng=None,
            number=None if rng.random() < 0.6 else str(int(rng.integers(1, 9999))),
            street=STREETS[rng.integers(len(STREETS))],
            side="R" if rng.random() < 0.8 else "L",
            city=city, county=county, zipcode=zipcode, country="US", timezone=tz,
            airport_code=airport,
            weather_timestamp=start.replace(minute=53, second=0) - timedelta(hours=1) if start.hour else None,
            temperature_f=temp_r,
            wind_chill_f=wind_chill,
            humidity_pct=round(float(np.clip(hum[c, t] + rng.normal(0, 3), 0, 100)), 0),
            pressure_in=round(float(pres[c, t]), 2),
            visibility_mi=round(float(max(0.0, vis[c, t] + rng.normal(0, 0.2))), 1),
            wind_direction=WIND_DIRS[rng.integers(len(WIND_DIRS))],
            wind_speed_mph=wind_r,
            precipitation_in=precip_r,
            weather_condition=_condition(temp[c, t], p, vis[c, t], rng),
            crossing=bool(rng.random() < 0.11),
            junction=bool(rng.random() < 0.07),
            station=bool(rng.random() < 0.03),
            stop=bool(rng.random() < 0.03),
            traffic_signal=bool(rng.random() < 0.15),
            amenity=bool(rng.random() < 0.01),
            give_way=bool(rng.random() < 0.005),
            railway=bool(rng.random() < 0.01),
            sunrise_sunset="Day" if day else "Night",
            civil_twilight="Day" if 5 <= hour < 19 else "Night",
            nautical_twilight="Day" if 5 <= hour < 19 else "Night",
            astronomical_twilight="Day" if 4 <= hour < 20 else "Night",
        ))
    return records


def fixture_path() -> Path:
    """Path of the bundled fixture CSV."""
    return Path(str(resources.files("accident_forecast") / "data" / FIXTURE_NAME))


def write_fixture(path: str | Path, n_rows: int = FIXTURE_ROWS, seed: int = FIXTURE_SEED) -> Path:
    path = Path(path)
    write_snapshot(generate_fixture(n_rows, seed), path)
    return path


if __name__ == "__main__":
    print(write_fixture(fixture_path()))
