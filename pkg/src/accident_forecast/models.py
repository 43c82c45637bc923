"""Model registry: one fit/predict/persist interface over every family.

A ``ModelSpec`` names a family, its hyperparameters and a seed. Fitting a
spec on a FeatureFrame gives a ``TrainedModel`` that predicts from frames
with the same column schema and round-trips through a JSON manifest.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cart import RegressionTree, TreeConfig, fit_tree
from .dataset import (FeatureFrame, apply_encoding, encoding_table, fold_assignments,
                      refit_encodings, target_encode)
from .ensembles import (AdaBoostR2, BoostConfig, Forest, ForestConfig, GradientBoosting,
                        Stack, fit_adaboost_r2, fit_forest, fit_gbdt, fit_stacking)
from .linmod import LinearModel, fit_elastic_net, fit_huber, fit_ridge
from .seqmodel import (SeqConfig, TrainConfig, fit_sequence_model, sequence_model_from_dict,
                       sequence_model_to_dict)

MANIFEST_FORMAT = "accident-forecast/model"
MANIFEST_VERSION = 1

DEFAULTS: dict[str, dict] = {
    "decision_tree": {"max_depth": 12, "min_samples_leaf": 5},
    "random_forest": {"n_trees": 100, "feature_subsample": 1.0 / 3.0, "max_depth": 12,
                      "min_samples_leaf": 5, "bootstrap": True},
    "adaboost": {"n_rounds": 50, "max_depth": 3, "min_samples_leaf": 1},
    "lgbm": {"n_rounds": 200, "learning_rate": 0.1, "max_leaves": 31, "n_bins": 64,
             "min_samples_leaf": 5},
    "catboost": {"n_rounds": 200, "learning_rate": 0.1, "max_depth": 6, "n_bins": 64,
                 "min_samples_leaf": 5, "folds": 5, "smoothing": 20.0,
                 "categories": ["cell_id", "state", "weather_condition"]},
    "lasso": {"lam": 1.0},
    "elastic_net": {"lam": 1.0, "alpha": 0.5},
    "robust": {"delta": 1.35},
    "ridge": {"lam": 1.0},
    "stacking": {"bases": ["random_forest", "lgbm", "lasso"], "folds": 5, "meta_lam": 1e-3},
    "lstm": {"window": 28, "hidden": 32, "epochs": 8, "lr": 1e-3, "optimizer": "adam", "clip": 5.0},
    "automl": {"budget": 8, "folds": 3},
}
FAMILIES = tuple(sorted(DEFAULTS))

# display names matching the comparison table
DISPLAY = {
    "random_forest": "Random Forest Regressor", "decision_tree": "Decision Tree Regressor",
    "adaboost": "Adaptive Boosting", "catboost": "Category Boosting", "lgbm": "LGBM Regressor",
    "lasso": "Lasso Regression", "elastic_net": "Elastic Net Regression",
    "robust": "Robust Regression", "stacking": "Stacking Regressor",
    "lstm": "Long-Short Term Memory", "automl": "Auto Machine Learning", "ridge": "Ridge Regression",
}
# the eleven models of the comparison table
ROSTER = ("random_forest", "decision_tree", "adaboost", "catboost", "lgbm", "lasso",
          "elastic_net", "robust", "stacking", "lstm", "automl")


class FingerprintMismatch(ValueError):
    pass


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict = field(default_factory=dict)
    seed: int = 42
    name: str | None = None

    def __post_init__(self):
        if self.family not in DEFAULTS:
            raise ModelError(f"unknown model family {self.family!r}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise ModelError(f"unknown parameter(s) for {self.family}: {', '.join(sorted(unknown))}")

    @property
    def label(self) -> str:
        return self.name or self.family

    def resolved(self) -> dict:
        p = dict(DEFAULTS[self.family])
        p.update(self.params)
        return p

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.resolved(), "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["family"], dict(d.get("params", {})), int(d.get("seed", 42)), d.get("name"))

    def config_hash(self) -> str:
        blob = json.dumps({"family": self.family, "params": self.resolved(), "seed": self.seed},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def as_spec(spec, seed: int = 42) -> ModelSpec:
    if isinstance(spec, ModelSpec):
        return spec
    if isinstance(spec, str):
        return ModelSpec(spec, seed=seed)
    return ModelSpec.from_dict({"seed": seed, **spec})


# --------------------------------------------------------------- estimators

@dataclass
class CategoryBoosting:
    """GBDT on the frame plus out-of-fold target encodings of categorical keys."""

    tables: dict[str, tuple[dict, float]]
    gbdt: GradientBoosting

    def predict(self, frame: FeatureFrame) -> np.ndarray:
        return self.gbdt.predict(_with_categories(frame, self.tables))


def _category(frame: FeatureFrame, source: str) -> np.ndarray:
    return frame.cell_ids if source == "cell_id" else frame.categoricals[source]


def _with_categories(frame: FeatureFrame, tables, encoded=None) -> np.ndarray:
    extra = []
    for source, (table, prior) in tables.items():
        if encoded is not None:
            extra.append(encoded[source])
        else:
            extra.append(apply_encoding(_category(frame, source), table, prior))
    return np.column_stack([frame.matrix, *extra]) if extra else frame.matrix


def _tree_cfg(p: dict, seed: int) -> TreeConfig:
    return TreeConfig(max_depth=p["max_depth"], min_samples_leaf=p["min_samples_leaf"], seed=seed)


def _pair(frame: FeatureFrame, fit_idx, pred_idx):
    return refit_encodings(frame.take(fit_idx), frame.take(pred_idx))


def _fit_estimator(spec: ModelSpec, frame: FeatureFrame, threads: int = 1):
    p = spec.resolved()
    X, y, seed = frame.matrix, frame.targets, spec.seed
    fam = spec.family
    if fam == "decision_tree":
        return fit_tree(X, y, _tree_cfg(p, seed))
    if fam == "random_forest":
        cfg = ForestConfig(n_trees=p["n_trees"], bootstrap=p["bootstrap"],
                           feature_subsample=p["feature_subsample"], tree=_tree_cfg(p, seed), seed=seed)
        return fit_forest(X, y, cfg, threads=threads)
    if fam == "adaboost":
        return fit_adaboost_r2(X, y, p["n_rounds"], _tree_cfg(p, seed), seed)
    if fam == "lgbm":
        return fit_gbdt(X, y, BoostConfig(n_rounds=p["n_rounds"], learning_rate=p["learning_rate"],
                                          growth="leaf-wise", max_leaves=p["max_leaves"],
                                          n_bins=p["n_bins"], min_samples_leaf=p["min_samples_leaf"],
                                          seed=seed))
    if fam == "catboost":
        tables, encoded = {}, {}
        for source in p["categories"]:
            cats = _category(frame, source)
            tables[source] = encoding_table(cats, y, p["smoothing"])
            encoded[source] = target_encode(cats, y, folds=p["folds"], seed=seed, smoothing=p["smoothing"])
        cfg = BoostConfig(n_rounds=p["n_rounds"], learning_rate=p["learning_rate"], growth="depth-wise",
                          max_depth=p["max_depth"], n_bins=p["n_bins"],
                          min_samples_leaf=p["min_samples_leaf"], seed=seed)
        return CategoryBoosting(tables, fit_gbdt(_with_categories(frame, tables, encoded), y, cfg))
    if fam == "lasso":
        return fit_elastic_net(X, y, p["lam"], 1.0)
    if fam == "elastic_net":
        return fit_elastic_net(X, y, p["lam"], p["alpha"])
    if fam == "robust":
        return fit_huber(X, y, p["delta"])
    if fam == "ridge":
        return fit_ridge(X, y, p["lam"], standardize_columns=True)
    if fam == "stacking":
        bases = [as_spec(b, seed) for b in p["bases"]]
        if not bases:
            raise ModelError("stacking needs at least one base model")
        folds = fold_assignments(frame, p["folds"], seed=seed, temporal=True)
        fits = [(b.label, (lambda f, b=b: fit_model(b, f))) for b in bases]
        return fit_stacking(frame, y, fits, folds, p["meta_lam"], take=lambda f, i: f.take(i),
                            threads=threads, pair=_pair)
    if fam == "lstm":
        cfg = SeqConfig(window=p["window"], train=TrainConfig(
            epochs=p["epochs"], optimizer=p["optimizer"], lr=p["lr"], clip=p["clip"],
            hidden=p["hidden"], seed=seed))
        return fit_sequence_model(frame, cfg)
    if fam == "automl":
        from .evaluate import SearchSpace, automl_search
        best, board = automl_search(frame, SearchSpace(budget=p["budget"], folds=p["folds"], seed=seed),
                                    threads=threads)
        inner = fit_model(best, frame, threads)
        inner.extra["leaderboard"] = [row.to_dict() for row in board]
        return inner
    raise ModelError(f"unknown model family {fam!r}")


def _frame_input(family: str) -> bool:
    return family in ("catboost", "stacking", "lstm", "automl")


# --------------------------------------------------------------- persistence

def _encode(family: str, est) -> dict:
    if family in ("decision_tree",):
        return est.to_dict()
    if family == "random_forest":
        return {"trees": [t.to_dict() for t in est.trees], "oob_mse": est.oob_mse,
                "config": {"n_trees": est.config.n_trees, "bootstrap": est.config.bootstrap,
                           "feature_subsample": est.config.feature_subsample,
                           "tree": asdict(est.config.tree), "seed": est.config.seed}}
    if family == "adaboost":
        return {"trees": [t.to_dict() for t in est.trees],
                "estimator_weights": [float(w) for w in est.estimator_weights],
                "avg_losses": est.avg_losses, "config": est.config}
    if family == "lgbm":
        return _encode_gbdt(est)
    if family == "catboost":
        return {"tables": {k: {"table": t, "prior": prior} for k, (t, prior) in est.tables.items()},
                "gbdt": _encode_gbdt(est.gbdt)}
    if family in ("lasso", "elastic_net", "robust", "ridge"):
        return est.to_dict()
    if family == "stacking":
        return {"names": est.names, "bases": [b.to_manifest() for b in est.bases],
                "meta": est.meta.to_dict()}
    if family == "lstm":
        return sequence_model_to_dict(est)
    raise ModelError(f"cannot serialize family {family!r}")


def _encode_gbdt(g: GradientBoosting) -> dict:
    return {"init": g.init, "learning_rate": g.learning_rate, "train_loss": g.train_loss,
            "trees": [t.to_dict() for t in g.trees], "config": asdict(g.config)}


def _decode_gbdt(d: dict) -> GradientBoosting:
    return GradientBoosting(float(d["init"]), [RegressionTree.from_dict(t) for t in d["trees"]],
                            float(d["learning_rate"]), list(d["train_loss"]), BoostConfig(**d["config"]))


def _decode(family: str, d: dict):
    if family == "decision_tree":
        return RegressionTree.from_dict(d)
    if family == "random_forest":
        c = dict(d["config"])
        c["tree"] = TreeConfig(**c["tree"])
        return Forest([RegressionTree.from_dict(t) for t in d["trees"]], ForestConfig(**c), d["oob_mse"])
    if family == "adaboost":
        return AdaBoostR2([RegressionTree.from_dict(t) for t in d["trees"]],
                          np.array(d["estimator_weights"], dtype=float), [], list(d["avg_losses"]),
                          d["config"])
    if family == "lgbm":
        return _decode_gbdt(d)
    if family == "catboost":
        return CategoryBoosting({k: (v["table"], float(v["prior"])) for k, v in d["tables"].items()},
                                _decode_gbdt(d["gbdt"]))
    if family in ("lasso", "elastic_net", "robust", "ridge"):
        return LinearModel.from_dict(d)
    if family == "stacking":
        bases = [TrainedModel.from_manifest(b) for b in d["bases"]]
        return Stack(list(d["names"]), bases, LinearModel.from_dict(d["meta"]), np.zeros((0, len(bases))))
    if family == "lstm":
        return sequence_model_from_dict(d)
    raise ModelError(f"cannot deserialize family {family!r}")


# ------------------------------------------------------------ trained model

@dataclass
class TrainedModel:
    spec: ModelSpec
    estimator: object
    schema_fingerprint: str
    columns: list[str]
    fit_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        # an automl model stores the family it selected
        return self.extra.get("inner_family", self.spec.family)

    def check(self, frame: FeatureFrame) -> None:
        fp = frame.schema_fingerprint()
        if fp != self.schema_fingerprint:
            raise FingerprintMismatch(f"frame schema {fp} does not match model schema {self.schema_fingerprint}")

    def predict(self, frame: FeatureFrame) -> np.ndarray:
        self.check(frame)
        if _frame_input(self.family):
            return np.asarray(self.estimator.predict(frame), dtype=float)
        return np.asarray(self.estimator.predict(frame.matrix), dtype=float)

    def to_manifest(self) -> dict:
        return {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "kind": self.spec.family,
                "name": self.spec.label, "family": self.family, "config": self.spec.to_dict(),
                "config_hash": self.spec.config_hash(), "seed": self.spec.seed,
                "schema_fingerprint": self.schema_fingerprint, "columns": self.columns,
                "fit_seconds": self.fit_seconds, "extra": self.extra,
                "estimator": _encode(self.family, self.estimator)}

    @classmethod
    def from_manifest(cls, d: dict) -> "TrainedModel":
        if d.get("format") != MANIFEST_FORMAT:
            raise ModelError("not a model manifest")
        if d.get("version") != MANIFEST_VERSION:
            raise ModelError(f"unsupported manifest version {d.get('version')}")
        family = d["family"]
        return cls(ModelSpec.from_dict(d["config"]), _decode(family, d["estimator"]),
                   d["schema_fingerprint"], list(d["columns"]), float(d.get("fit_seconds", 0.0)),
                   dict(d.get("extra", {})))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_manifest(), sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        return cls.from_manifest(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_model(spec, frame: FeatureFrame, threads: int = 1) -> TrainedModel:
    """Fit ``spec`` (a ModelSpec, family name or dict) on ``frame``."""
    spec = as_spec(spec)
    if frame.n_rows == 0:
        raise ModelError("cannot fit on an empty frame")
    t0 = time.perf_counter()
    est = _fit_estimator(spec, frame, threads)
    elapsed = time.perf_counter() - t0
    if isinstance(est, TrainedModel):
        # automl: wrap the selected model under the automl spec
        extra = dict(est.extra)
        extra["inner_family"] = est.family
        extra["selected"] = est.spec.to_dict()
        return TrainedModel(spec, est.estimator, est.schema_fingerprint, est.columns, elapsed, extra)
    return TrainedModel(spec, est, frame.schema_fingerprint(), frame.column_names, elapsed)
