"""Run configuration read from an INI file; command-line flags override it.

Example::

    [dataset]
    cell_scheme = city
    bucket_hours = 24
    [features]
    lags = 1, 2
    lag_hours = 24
    top_k = 10
    smoothing = 20
    [split]
    strategy = temporal-holdout
    test_fraction = 0.2
    [run]
    seed = 42
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .dataset import CELL_SCHEMES, FeatureConfig, SplitSpec, check_bucket_hours


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    cell_scheme: str = "city"
    bucket_hours: int = 24
    grid_resolution: float = 0.1
    date_start: str | None = None
    date_end: str | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    seed: int = 42

    def validate(self) -> "RunConfig":
        if self.cell_scheme not in CELL_SCHEMES:
            raise ConfigError(f"unknown cell scheme {self.cell_scheme!r}")
        try:
            check_bucket_hours(self.bucket_hours)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.grid_resolution <= 0:
            raise ConfigError("grid_resolution must be positive")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, features=replace(self.features, seed=seed),
                       split=replace(self.split, seed=seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"]["lags"] = list(self.features.lags)
        d["features"]["lag_hours"] = list(self.features.lag_hours)
        return d


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def load_config(path: str | Path | None) -> RunConfig:
    """Read ``path``; None gives the defaults. Unknown keys are errors."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = {
        "dataset": {"cell_scheme", "bucket_hours", "grid_resolution", "date_start", "date_end"},
        "features": {"lags", "lag_hours", "top_k", "smoothing", "te_folds"},
        "split": {"strategy", "test_fraction"},
        "run": {"seed"},
    }
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
        extra = set(parser[section]) - known[section]
        if extra:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    try:
        if parser.has_section("dataset"):
            s = parser["dataset"]
            cfg.cell_scheme = s.get("cell_scheme", cfg.cell_scheme)
            cfg.bucket_hours = s.getint("bucket_hours", cfg.bucket_hours)
            cfg.grid_resolution = s.getfloat("grid_resolution", cfg.grid_resolution)
            cfg.date_start = s.get("date_start", cfg.date_start)
            cfg.date_end = s.get("date_end", cfg.date_end)
        if parser.has_section("features"):
            s = parser["features"]
            f = cfg.features
            cfg.features = FeatureConfig(
                lags=_ints(s["lags"]) if "lags" in s else f.lags,
                lag_hours=_ints(s["lag_hours"]) if "lag_hours" in s else f.lag_hours,
                top_k=s.getint("top_k", f.top_k), smoothing=s.getfloat("smoothing", f.smoothing),
                te_folds=s.getint("te_folds", f.te_folds), seed=f.seed)
        if parser.has_section("split"):
            s = parser["split"]
            cfg.split = SplitSpec(s.get("strategy", cfg.split.strategy),
                                  s.getfloat("test_fraction", cfg.split.test_fraction), cfg.split.seed)
        if parser.has_section("run"):
            cfg = cfg.with_seed(parser["run"].getint("seed", cfg.seed))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg.validate()
