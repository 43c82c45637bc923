"""Command-line entry point: ingest, eda, build, train, evaluate, automl, predict.

Exit codes: 0 ok, 1 I/O, 2 validation or configuration, 3 model/frame
schema mismatch. Every run writes one ``run_<command>.json`` manifest into
its output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime
from pathlib import Path

from . import __version__, cache, eda
from .config import ConfigError, RunConfig, load_config
from .dataset import (DatasetError, aggregate_counts, engineer_features, load_frame,
                      save_frame_binary, save_frame_text, split)
from .evaluate import SearchSpace, automl_search, build_report, pairs_csv, score_models
from .ingest import RecordError, SchemaError, parse_snapshot, write_rejects
from .models import ROSTER, FingerprintMismatch, ModelError, ModelSpec, TrainedModel, fit_model

ENV_DATA = "ACCIDENT_FORECAST_DATA"
EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_MISMATCH = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input(args) -> Path:
    """--input, else the data directory from the environment."""
    raw = args.input or os.environ.get(ENV_DATA)
    if not raw:
        raise CliError(EXIT_INVALID, f"no --input given and {ENV_DATA} is unset")
    path = Path(raw)
    if not path.is_absolute() and not path.exists() and os.environ.get(ENV_DATA):
        path = Path(os.environ[ENV_DATA]) / raw
    if not path.exists():
        raise CliError(EXIT_IO, f"input not found: {path}")
    return path


def _records(path: Path, threads: int):
    """Records from a snapshot CSV or a record cache."""
    if path.is_dir():
        path = path / "records.afc"
    if not path.exists():
        raise CliError(EXIT_IO, f"input not found: {path}")
    with path.open("rb") as fh:
        is_cache = fh.read(len(cache.MAGIC)) == cache.MAGIC
    if is_cache:
        recs, _ = cache.read_records(path)
        return recs
    recs, _ = parse_snapshot(path, "lenient", threads)
    return recs


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    return cfg.with_seed(seed)


def _frames_dir(path: Path):
    train = sorted(path.glob("train.frame*"))
    test = sorted(path.glob("test.frame*"))
    if not train or not test:
        raise CliError(EXIT_IO, f"{path}: no train/test frames (run build first)")
    return load_frame(train[0]), load_frame(test[0])


# ---------------------------------------------------------------- commands

def cmd_ingest(args, out: Path, info: dict) -> None:
    src = _input(args)
    recs, summary = parse_snapshot(src, args.mode, args.threads)
    cache.write_records(out / "records.afc", recs)
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    write_rejects(summary, out / "rejects.csv")
    info["rows_read"] = summary.rows_read
    info["rows_accepted"] = summary.rows_accepted
    info["rows_rejected"] = summary.rows_rejected


def cmd_eda(args, out: Path, info: dict) -> None:
    recs = _records(_input(args), args.threads)
    names = args.only or list(eda.TABLES)
    tables = eda.compute_tables(recs, names, args.threads, args.bin_width)
    fmt = args.format or "csv"
    eda.write_tables(tables, out, fmt)
    info["tables"] = {n: {"total": t.total, "excluded": t.excluded} for n, t in tables.items()}
    info["records"] = len(recs)


def cmd_build(args, out: Path, info: dict) -> None:
    cfg = _config(args)
    if args.bucket_hours is not None:
        cfg.bucket_hours = args.bucket_hours
    cfg.validate()
    recs = _records(_input(args), args.threads)
    date_range = None
    if cfg.date_start or cfg.date_end:
        date_range = (datetime.fromisoformat(cfg.date_start) if cfg.date_start else None,
                      datetime.fromisoformat(cfg.date_end) if cfg.date_end else None)
    series = aggregate_counts(recs, cfg.cell_scheme, cfg.bucket_hours, True, date_range, cfg.grid_resolution)
    frame = engineer_features(series, recs, cfg.features, cfg.cell_scheme, cfg.grid_resolution)
    train, test = split(frame, cfg.split)
    if (args.format or "binary") == "csv":
        save_frame_text(train, out / "train.frame.csv")
        save_frame_text(test, out / "test.frame.csv")
    else:
        save_frame_binary(train, out / "train.frame")
        save_frame_binary(test, out / "test.frame")
    info.update(config=cfg.to_dict(), series_rows=len(series), excluded=series.excluded,
                frame_rows=frame.n_rows, train_rows=train.n_rows, test_rows=test.n_rows,
                schema_fingerprint=frame.schema_fingerprint())


def _specs(args) -> list[ModelSpec]:
    names = args.model or ["random_forest"]
    if names == ["all"]:
        names = list(ROSTER)
    params = json.loads(args.params) if args.params else {}
    return [ModelSpec(n, params.get(n, {}), seed=args.seed if args.seed is not None else 42) for n in names]


def cmd_train(args, out: Path, info: dict) -> None:
    train, _ = _frames_dir(_input(args))
    trained = {}
    for spec in _specs(args):
        model = fit_model(spec, train, args.threads)
        model.save(out / f"{spec.label}.model.json")
        trained[spec.label] = {"config_hash": spec.config_hash(), "fit_seconds": model.fit_seconds}
    info["models"] = trained


def _load_models(path: Path) -> dict[str, TrainedModel]:
    files = sorted(path.glob("*.model.json")) if path.is_dir() else [path]
    if not files:
        raise CliError(EXIT_INVALID, f"no trained models in {path}")
    return {f.name[:-len(".model.json")]: TrainedModel.load(f) for f in files}


def cmd_evaluate(args, out: Path, info: dict) -> None:
    _, test = _frames_dir(_input(args))
    models_dir = Path(args.models) if args.models else out
    if not models_dir.exists():
        raise CliError(EXIT_INVALID, f"no trained models in {models_dir}")
    models = _load_models(models_dir)
    for m in models.values():
        m.check(test)
    seed = args.seed if args.seed is not None else 42
    report = score_models(models, test, seed)
    _write_report(report, test, out, args.format)
    info["models"] = [r.name for r in report.rows]


def _write_report(report, test, out: Path, fmt) -> None:
    if fmt in (None, "report"):
        (out / "report.json").write_text(report.to_text(), encoding="utf-8")
    if fmt in (None, "csv"):
        (out / "table.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "pairs.csv").write_text(pairs_csv(test, report), encoding="utf-8")


def cmd_automl(args, out: Path, info: dict) -> None:
    train, _ = _frames_dir(_input(args))
    seed = args.seed if args.seed is not None else 42
    best, board = automl_search(train, SearchSpace(budget=args.budget, folds=args.folds, seed=seed),
                                threads=args.threads)
    (out / "leaderboard.json").write_text(
        json.dumps({"best": best.to_dict(), "leaderboard": [r.to_dict() for r in board]},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    info["best"] = best.to_dict()


def cmd_predict(args, out: Path, info: dict) -> None:
    if not args.model_file:
        raise CliError(EXIT_INVALID, "predict needs --model-file")
    model = TrainedModel.load(args.model_file)
    src = _input(args)
    frame = load_frame(src)
    pred = model.predict(frame)
    lines = ["cell_id,bucket_start,prediction"]
    starts = frame.bucket_starts.astype("datetime64[s]").astype(str)
    lines += [f"{c},{s},{repr(float(p))}" for c, s, p in zip(frame.cell_ids, starts, pred)]
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    info["rows"] = frame.n_rows


COMMANDS = {"ingest": cmd_ingest, "eda": cmd_eda, "build": cmd_build, "train": cmd_train,
            "evaluate": cmd_evaluate, "automl": cmd_automl, "predict": cmd_predict}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="accident-forecast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--input", help=f"input path (default: ${ENV_DATA})")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default 42)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", default=None)
        return sp

    sp = common(sub.add_parser("ingest", help="parse and validate a snapshot"))
    sp.add_argument("--mode", choices=("strict", "lenient"), default="lenient")
    sp = common(sub.add_parser("eda", help="descriptive tables"))
    sp.add_argument("--only", nargs="+", choices=eda.TABLES + eda.EXTRA_TABLES)
    sp.add_argument("--bin-width", type=float, default=1.0)
    sp = common(sub.add_parser("build", help="aggregate, engineer features, split"))
    sp.add_argument("--bucket-hours", type=int, default=None)
    sp = common(sub.add_parser("train", help="fit models on the train frame"))
    sp.add_argument("--model", action="append", help="model family (repeatable, or 'all')")
    sp.add_argument("--params", help='JSON object {"family": {param: value}}')
    sp = common(sub.add_parser("evaluate", help="score trained models on the test frame"))
    sp.add_argument("--models", help="directory of trained models (default: --out)")
    sp = common(sub.add_parser("automl", help="random search over model families"))
    sp.add_argument("--budget", type=int, default=8)
    sp.add_argument("--folds", type=int, default=3)
    sp = common(sub.add_parser("predict", help="score a frame with a persisted model"))
    sp.add_argument("--model-file", help="model manifest")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    out = Path(args.out)
    manifest = {"subcommand": args.command, "config": args.config, "input": args.input,
                "out": str(out), "seed": args.seed if args.seed is not None else 42,
                "version": __version__, "started": datetime.now().isoformat(timespec="seconds")}
    info: dict = {}
    code = EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
        before = {p: p.stat().st_mtime_ns for p in out.iterdir() if p.is_file()}
        COMMANDS[args.command](args, out, info)
    except CliError as exc:
        code = exc.code
        info["error"] = str(exc)
    except FingerprintMismatch as exc:
        code = EXIT_MISMATCH
        info["error"] = str(exc)
    except (SchemaError, RecordError, ConfigError, DatasetError, ModelError, ValueError) as exc:
        code = EXIT_INVALID
        info["error"] = f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code = EXIT_IO
        info["error"] = f"{type(exc).__name__}: {exc}"
    if "error" in info:
        print(f"error: {info['error']}", file=sys.stderr)
    manifest.update(info)
    manifest["exit_status"] = code
    manifest["finished"] = datetime.now().isoformat(timespec="seconds")
    name = f"run_{args.command}.json"
    try:
        if out.is_dir():
            outputs = {}
            for p in sorted(out.iterdir()):
                if p.is_file() and p.name != name and not p.name.startswith("run_") and (
                        p not in before or before[p] != p.stat().st_mtime_ns):
                    outputs[p.name] = _digest(p)
            manifest["outputs"] = outputs
            (out / name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
