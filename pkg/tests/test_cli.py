import json

import pytest

from accident_forecast import cli, eda
from accident_forecast.dataset import load_frame
from accident_forecast.fixture import fixture_path
from test_ingest import raw_row, write_rows
from accident_forecast.ingest import COLUMNS


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    codes = {
        "ingest": run("ingest", "--input", fixture_path(), "--out", root / "ingest"),
        "build": run("build", "--input", root / "ingest", "--out", root / "frames"),
        "train": run("train", "--input", root / "frames", "--out", root / "models",
                     "--model", "ridge", "--model", "decision_tree"),
        "evaluate": run("evaluate", "--input", root / "frames", "--models", root / "models",
                        "--out", root / "report"),
    }
    return root, codes


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    assert codes == {"ingest": 0, "build": 0, "train": 0, "evaluate": 0}


def test_ingest_outputs(pipeline):
    root, _ = pipeline
    summary = json.loads((root / "ingest" / "summary.json").read_text())
    assert summary["rows_read"] == 5000
    man = json.loads((root / "ingest" / "run_ingest.json").read_text())
    assert man["exit_status"] == 0 and "records.afc" in man["outputs"] and man["seed"] == 42


def test_build_manifest_counts(pipeline):
    root, _ = pipeline
    man = json.loads((root / "frames" / "run_build.json").read_text())
    train, test = load_frame(root / "frames" / "train.frame"), load_frame(root / "frames" / "test.frame")
    assert (man["train_rows"], man["test_rows"]) == (train.n_rows, test.n_rows)
    assert man["frame_rows"] == train.n_rows + test.n_rows


def test_report_has_rows(pipeline):
    root, _ = pipeline
    report = json.loads((root / "report" / "report.json").read_text())
    names = {r["name"] for r in report["rows"]}
    assert names == {"ridge", "decision_tree"}
    assert all(r["status"] == "ok" and r["mse"] >= 0 for r in report["rows"])
    assert (root / "report" / "table.csv").read_text().startswith("Model,MSE,R-Square,Actual,Predicted")


def test_eda_files_and_determinism(pipeline, tmp_path):
    root, _ = pipeline
    assert run("eda", "--input", root / "ingest", "--out", tmp_path / "a") == 0
    assert run("eda", "--input", root / "ingest", "--out", tmp_path / "b", "--threads", "4") == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert files == sorted(f"{n}.csv" for n in eda.TABLES)
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run("eda", "--input", root / "ingest", "--out", tmp_path / "c", "--only", "weekday") == 0
    assert [p.name for p in (tmp_path / "c").glob("*.csv")] == ["weekday.csv"]


def test_rebuild_is_byte_identical(pipeline, tmp_path):
    root, _ = pipeline
    assert run("build", "--input", root / "ingest", "--out", tmp_path) == 0
    for name in ("train.frame", "test.frame"):
        assert (tmp_path / name).read_bytes() == (root / "frames" / name).read_bytes()


def test_predict_and_fingerprint_mismatch(pipeline, tmp_path):
    root, _ = pipeline
    model = root / "models" / "ridge.model.json"
    assert run("predict", "--input", root / "frames" / "test.frame", "--model-file", model,
               "--out", tmp_path / "p") == 0
    lines = (tmp_path / "p" / "predictions.csv").read_text().splitlines()
    assert len(lines) == load_frame(root / "frames" / "test.frame").n_rows + 1
    ini = tmp_path / "lags.ini"
    ini.write_text("[features]\nlags = 1\n")
    assert run("build", "--input", root / "ingest", "--config", ini, "--out", tmp_path / "f2") == 0
    assert run("predict", "--input", tmp_path / "f2" / "test.frame", "--model-file", model,
               "--out", tmp_path / "p2") == 3


def test_validation_exits(pipeline, tmp_path):
    root, _ = pipeline
    assert run("build", "--input", root / "ingest", "--out", tmp_path / "b", "--bucket-hours", "7") == 2
    assert run("evaluate", "--input", root / "frames", "--out", tmp_path / "empty") == 2
    assert run("ingest", "--input", tmp_path / "missing.csv", "--out", tmp_path / "i") == 1
    bad = tmp_path / "bad.csv"
    write_rows(bad, [raw_row()], [c for c in COLUMNS if c != "Severity"])
    assert run("ingest", "--input", bad, "--out", tmp_path / "i2") == 2
    man = json.loads((tmp_path / "i2" / "run_ingest.json").read_text())
    assert man["exit_status"] == 2 and "error" in man


def test_env_var_supplies_input(pipeline, tmp_path, monkeypatch):
    root, _ = pipeline
    monkeypatch.setenv(cli.ENV_DATA, str(root / "ingest"))
    assert run("eda", "--out", tmp_path, "--only", "state") == 0
