import json

import numpy as np
import pytest

from accident_forecast.dataset import Column, FeatureFrame
from accident_forecast.models import (FAMILIES, ROSTER, FingerprintMismatch, ModelError, ModelSpec,
                                      TrainedModel, as_spec, fit_model)

SMALL = {
    "decision_tree": {"max_depth": 6},
    "random_forest": {"n_trees": 8, "max_depth": 6},
    "adaboost": {"n_rounds": 5},
    "lgbm": {"n_rounds": 15, "max_leaves": 7},
    "catboost": {"n_rounds": 15, "max_depth": 3},
    "lasso": {"lam": 0.1},
    "elastic_net": {"lam": 0.1},
    "robust": {},
    "ridge": {},
    "stacking": {"bases": [{"family": "decision_tree", "params": {"max_depth": 4}}, "ridge"], "folds": 3},
    "lstm": {"window": 4, "hidden": 4, "epochs": 1},
    "automl": {"budget": 2, "folds": 2},
}


def test_small_configs_cover_every_family():
    assert set(SMALL) == set(FAMILIES) and set(ROSTER) <= set(FAMILIES)


@pytest.mark.parametrize("family", sorted(SMALL))
def test_manifest_roundtrip(tmp_path, fixture_split, family):
    train, test = fixture_split
    model = fit_model(ModelSpec(family, SMALL[family], seed=7), train)
    pred = model.predict(test)
    assert pred.shape == (test.n_rows,) and np.all(np.isfinite(pred))
    back = TrainedModel.load(model.save(tmp_path / "m.json"))
    assert np.array_equal(back.predict(test), pred)
    assert back.spec.config_hash() == model.spec.config_hash() and back.family == model.family
    assert json.loads((tmp_path / "m.json").read_text())["config_hash"] == model.spec.config_hash()


def test_refit_is_deterministic(fixture_split):
    train, test = fixture_split
    spec = ModelSpec("random_forest", SMALL["random_forest"], seed=3)
    assert np.array_equal(fit_model(spec, train).predict(test), fit_model(spec, train, threads=3).predict(test))


def test_fingerprint_mismatch(fixture_split):
    train, test = fixture_split
    model = fit_model(ModelSpec("ridge"), train)
    other = FeatureFrame(test.matrix, [Column(c.name + "_x", c.kind, c.group) for c in test.columns],
                         test.targets, test.cell_ids, test.bucket_starts, test.categoricals, test.meta)
    with pytest.raises(FingerprintMismatch):
        model.predict(other)


def test_spec_validation_and_hash():
    with pytest.raises(ModelError):
        ModelSpec("svm")
    with pytest.raises(ModelError):
        ModelSpec("lasso", {"depth": 3})
    a = ModelSpec("lasso", {"lam": 1.0})
    assert a.config_hash() == ModelSpec("lasso").config_hash()
    assert a.config_hash() != ModelSpec("lasso", seed=1).config_hash()
    assert as_spec(a.to_dict()) == ModelSpec("lasso", {"lam": 1.0})
    assert as_spec("ridge", seed=5).seed == 5


def test_bad_manifest():
    with pytest.raises(ModelError):
        TrainedModel.from_manifest({"format": "something else"})
