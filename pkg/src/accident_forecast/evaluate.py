"""Metrics, cross-validation, random-search model selection and the comparison report."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import FeatureFrame, fold_assignments, refit_encodings
from .models import DISPLAY, ModelSpec, TrainedModel, as_spec, fit_model


class MetricError(ValueError):
    pass


def _pair_arrays(actual, predicted):
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.size != p.size:
        raise MetricError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise MetricError("metrics need at least one value")
    return a, p


def mse(actual, predicted) -> float:
    a, p = _pair_arrays(actual, predicted)
    return float(np.mean((a - p) ** 2))


def rmse(actual, predicted) -> float:
    return math.sqrt(mse(actual, predicted))


def r_square(actual, predicted) -> float:
    """1 - SS_res / SS_tot; negative when worse than predicting the mean."""
    a, p = _pair_arrays(actual, predicted)
    if a.size < 2:
        raise MetricError("R² needs at least two values")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R² undefined: actual values have zero variance")
    return 1.0 - float(np.sum((a - p) ** 2)) / ss_tot


def _r2_or_none(actual, predicted) -> float | None:
    try:
        return r_square(actual, predicted)
    except MetricError:
        return None


# --------------------------------------------------------- cross-validation

@dataclass
class CVResult:
    fold_mse: list[float]
    fold_r2: list[float | None]  # None where a fold's actuals are constant

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.fold_mse))

    @property
    def std_mse(self) -> float:
        return float(np.std(self.fold_mse))

    @property
    def mean_r2(self) -> float | None:
        vals = [r for r in self.fold_r2 if r is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def std_r2(self) -> float | None:
        vals = [r for r in self.fold_r2 if r is not None]
        return float(np.std(vals)) if vals else None

    def to_dict(self) -> dict:
        return {"fold_mse": self.fold_mse, "fold_r2": self.fold_r2, "mean_mse": self.mean_mse,
                "std_mse": self.std_mse, "mean_r2": self.mean_r2, "std_r2": self.std_r2}


def kfold_cv(frame: FeatureFrame, spec, k: int = 5, seed: int = 42, temporal: bool = True,
             threads: int = 1) -> CVResult:
    """K-fold CV; temporal folds are contiguous bucket ranges.

    Target-derived columns are refit on each fold's training rows.
    """
    if k < 2 or k > frame.n_rows:
        raise MetricError(f"need 2 <= K <= n, got K={k}, n={frame.n_rows}")
    spec = as_spec(spec, seed)
    folds = fold_assignments(frame, k, seed=seed, temporal=temporal)
    fold_mse, fold_r2 = [], []
    for f in np.unique(folds):
        inside = np.flatnonzero(folds == f)
        outside = np.flatnonzero(folds != f)
        train, held = refit_encodings(frame.take(outside), frame.take(inside))
        model = fit_model(spec, train, threads)
        pred = model.predict(held)
        fold_mse.append(mse(held.targets, pred))
        fold_r2.append(_r2_or_none(held.targets, pred))
    return CVResult(fold_mse, fold_r2)


# --------------------------------------------------------------- random search

DEFAULT_SPACE: dict[str, dict[str, list]] = {
    "decision_tree": {"max_depth": [3, 4, 6, 8, 12], "min_samples_leaf": [1, 5, 10, 20]},
    "random_forest": {"n_trees": [50, 100], "max_depth": [6, 8, 12], "min_samples_leaf": [1, 5, 10],
                      "feature_subsample": [1.0 / 3.0, 0.5]},
    "lgbm": {"n_rounds": [50, 100, 200], "learning_rate": [0.05, 0.1], "max_leaves": [7, 15, 31]},
    "lasso": {"lam": [0.01, 0.1, 1.0]},
    "elastic_net": {"lam": [0.01, 0.1, 1.0], "alpha": [0.2, 0.5, 0.8]},
    "ridge": {"lam": [0.1, 1.0, 10.0]},
}


class SearchError(RuntimeError):
    pass


@dataclass
class SearchSpace:
    families: dict[str, dict[str, list]] = field(default_factory=lambda: dict(DEFAULT_SPACE))
    budget: int = 8
    folds: int = 3
    seed: int = 42

    def __post_init__(self):
        if self.budget < 1:
            raise SearchError("budget must be >= 1")
        if not self.families:
            raise SearchError("search space has no families")

    def sample(self) -> list[ModelSpec]:
        """Candidate i depends only on (seed, i) and the space's content.

        Families and parameter names are visited in sorted order, so
        reordering the space does not change the candidates.
        """
        names = sorted(self.families)
        out = []
        for i in range(self.budget):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, i]))
            fam = names[int(rng.integers(len(names)))]
            grid = self.families[fam]
            params = {}
            for key in sorted(grid):
                choices = list(grid[key])
                params[key] = choices[int(rng.integers(len(choices)))]
            out.append(ModelSpec(fam, params, seed=self.seed, name=f"{fam}#{i}"))
        return out


@dataclass
class LeaderRow:
    index: int
    spec: ModelSpec
    mean_mse: float | None
    std_mse: float | None
    mean_r2: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "spec": self.spec.to_dict(), "mean_mse": self.mean_mse,
                "std_mse": self.std_mse, "mean_r2": self.mean_r2, "error": self.error}


def automl_search(frame: FeatureFrame, space: SearchSpace = SearchSpace(),
                  threads: int = 1) -> tuple[ModelSpec, list[LeaderRow]]:
    """Score each sampled candidate by CV mean MSE; ties go to the earliest."""
    candidates = space.sample()

    def score(item):
        i, spec = item
        try:
            cv = kfold_cv(frame, spec, space.folds, space.seed)
            return LeaderRow(i, spec, cv.mean_mse, cv.std_mse, cv.mean_r2)
        except Exception as exc:  # a failing candidate is recorded, not fatal
            return LeaderRow(i, spec, None, None, None, f"{type(exc).__name__}: {exc}")

    items = list(enumerate(candidates))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(score, items))
    else:
        rows = [score(it) for it in items]
    ok = [r for r in rows if r.error is None]
    if not ok:
        causes = "; ".join(f"#{r.index} {r.spec.family}: {r.error}" for r in rows)
        raise SearchError(f"every candidate failed: {causes}")
    board = sorted(ok, key=lambda r: (r.mean_mse, r.index)) + [r for r in rows if r.error is not None]
    return board[0].spec, board


# ---------------------------------------------------------------- reporting

@dataclass
class ReportRow:
    name: str
    family: str
    config_hash: str
    mse: float | None
    rmse: float | None
    r2: float | None
    actual: float | None
    predicted: float | None
    fit_seconds: float
    predict_seconds: float
    status: str = "ok"
    error: str | None = None

    @property
    def display(self) -> str:
        return DISPLAY.get(self.name, self.name)


@dataclass
class EvalReport:
    rows: list[ReportRow]
    dataset_fingerprint: str
    split: dict
    seed: int
    sample_index: int | None = None
    predictions: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "dataset_fingerprint": self.dataset_fingerprint,
                "split": self.split, "seed": self.seed, "sample_index": self.sample_index}

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Model, MSE, R-Square, Actual, Predicted; failed rows say so."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Model", "MSE", "R-Square", "Actual", "Predicted"])
        for r in self.rows:
            if r.status != "ok":
                w.writerow([r.display, "failed", "failed", "", ""])
                continue
            w.writerow([r.display, f"{r.mse:.2f}", "" if r.r2 is None else f"{r.r2:.2f}",
                        f"{r.actual:g}", f"{r.predicted:.2f}"])
        return buf.getvalue()

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def sample_row(targets) -> int:
    """First row whose actual equals the modal count (smallest mode on ties)."""
    t = np.asarray(targets, dtype=float)
    values, counts = np.unique(t, return_counts=True)
    mode = values[np.argmax(counts)]
    return int(np.flatnonzero(t == mode)[0])


def _sort_rows(rows: list[ReportRow]) -> list[ReportRow]:
    ok = sorted((r for r in rows if r.status == "ok"), key=lambda r: (r.mse, r.name))
    return ok + [r for r in rows if r.status != "ok"]


def _score(name: str, model: TrainedModel, test: FeatureFrame, k: int, fit_s: float):
    t0 = time.perf_counter()
    pred = model.predict(test)
    pred_s = time.perf_counter() - t0
    if not np.all(np.isfinite(pred)):
        raise MetricError("non-finite predictions")
    y = test.targets
    m = mse(y, pred)
    row = ReportRow(name, model.family, model.spec.config_hash(), m, math.sqrt(m), _r2_or_none(y, pred),
                    float(y[k]), float(pred[k]), fit_s, pred_s)
    return row, pred


def score_models(models: dict[str, TrainedModel], test: FeatureFrame, seed: int = 42) -> EvalReport:
    """Report for already-fitted models (no refit)."""
    if test.n_rows == 0:
        raise MetricError("empty test frame")
    k = sample_row(test.targets)
    rows, preds = [], {}
    for name, model in models.items():
        try:
            row, pred = _score(name, model, test, k, model.fit_seconds)
            preds[name] = pred.tolist()
        except Exception as exc:
            row = ReportRow(name, model.family, model.spec.config_hash(), None, None, None, None, None,
                            model.fit_seconds, 0.0, "failed", f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return EvalReport(_sort_rows(rows), test.data_fingerprint(), test.meta.get("split", {}), seed, k, preds)


def build_report(train: FeatureFrame, test: FeatureFrame, specs, seed: int = 42,
                 threads: int = 1) -> tuple[EvalReport, dict[str, TrainedModel]]:
    """Fit every spec on ``train``, score on ``test``. A failing model becomes a failed row."""
    specs = [as_spec(s, seed) for s in specs]
    if not specs:
        raise MetricError("no model specs given")
    models, failures = {}, {}
    for spec in specs:
        try:
            models[spec.label] = fit_model(spec, train, threads)
        except Exception as exc:
            failures[spec.label] = (spec, f"{type(exc).__name__}: {exc}")
    report = score_models(models, test, seed)
    for name, (spec, err) in failures.items():
        report.rows.append(ReportRow(name, spec.family, spec.config_hash(), None, None, None, None, None,
                                     0.0, 0.0, "failed", err))
    report.rows = _sort_rows(report.rows)
    return report, models


def pairs_csv(test: FeatureFrame, report: EvalReport) -> str:
    """Actual vs predicted per test row and model."""
    names = [r.name for r in report.rows if r.name in report.predictions]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id", "bucket_start", "actual", *names])
    starts = test.bucket_starts.astype("datetime64[s]").astype(str)
    for i in range(test.n_rows):
        w.writerow([test.cell_ids[i], starts[i], f"{test.targets[i]:g}",
                    *(repr(float(report.predictions[n][i])) for n in names)])
    return buf.getvalue()
