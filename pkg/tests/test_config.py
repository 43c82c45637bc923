import pytest

from accident_forecast.config import ConfigError, RunConfig, load_config


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig() and cfg.seed == 42 and cfg.bucket_hours == 24


def test_reads_sections(tmp_path):
    cfg = load_config(write(tmp_path, "[dataset]\ncell_scheme = state\nbucket_hours = 6\n"
                                      "[features]\nlags = 1, 3\n[split]\ntest_fraction = 0.25\n[run]\nseed = 9\n"))
    assert (cfg.cell_scheme, cfg.bucket_hours, cfg.features.lags) == ("state", 6, (1, 3))
    assert cfg.split.test_fraction == 0.25
    assert cfg.seed == cfg.features.seed == cfg.split.seed == 9


@pytest.mark.parametrize("text", ["[dataset]\nbucket_hours = 7\n", "[dataset]\ncell_scheme = county\n",
                                  "[model]\nx = 1\n", "[dataset]\ncolour = red\n", "[run]\nseed = abc\n",
                                  "not an ini file"])
def test_invalid(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_with_seed_and_dict():
    cfg = RunConfig().with_seed(3)
    d = cfg.to_dict()
    assert d["seed"] == d["split"]["seed"] == 3 and isinstance(d["features"]["lags"], list)
