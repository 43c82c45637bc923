import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accident_forecast.evaluate import (MetricError, SearchError, SearchSpace, automl_search, build_report,
                                        kfold_cv, mse, pairs_csv, r_square, rmse, sample_row, score_models)
from accident_forecast.models import ModelSpec, fit_model
from conftest import make_frame
from oracles import ridge_standardized


def nonlinear(seed, n=120):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, 3))
    y = 3 * np.sin(2 * X[:, 0]) * (X[:, 1] > 0) + 0.1 * rng.normal(size=n)
    return make_frame(X, y)


# metrics

def test_metric_examples():
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0
    assert mse([0, 0], [2, 0]) == 2.0
    assert r_square([0, 2], [5, 5]) == -16.0
    assert r_square([1, 2, 4], [1, 2, 4]) == 1.0


def test_mean_predictor_r2_is_exactly_zero():
    a = np.array([1.0, 4.0, 2.0, 7.0])
    assert r_square(a, np.full(4, a.mean())) == 0.0


@pytest.mark.parametrize("a,p", [([1, 2], [1]), ([], [])])
def test_metric_length_errors(a, p):
    with pytest.raises(MetricError):
        mse(a, p)


def test_r2_errors():
    with pytest.raises(MetricError, match="R² undefined"):
        r_square([3, 3, 3], [1, 2, 3])
    with pytest.raises(MetricError):
        r_square([1], [1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=30),
       st.randoms(use_true_random=False))
def test_metric_properties(pairs, rnd):
    a, p = map(np.array, zip(*pairs))
    m = mse(a, p)
    assert m >= 0 and (m == 0) == np.array_equal(a, p)
    assert abs(rmse(a, p) ** 2 - m) <= 1e-12 * max(1.0, m)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a2, p2 = map(np.array, zip(*shuffled))
    assert mse(a2, p2) == pytest.approx(m, rel=1e-12, abs=1e-12)
    if np.var(a) > 0:
        assert r_square(a, p) <= 1.0


# cross-validation

def test_too_many_temporal_folds():
    with pytest.raises(ValueError):
        kfold_cv(make_frame(np.ones((4, 1)), [1, 2, 3, 4]), "ridge", k=5)


def test_two_folds_match_manual_half_fits():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 2))
    y = X @ [1.5, -2.0] + rng.normal(size=10)
    cv = kfold_cv(make_frame(X, y), ModelSpec("ridge", {"lam": 0.5}), k=2)
    halves = [np.arange(5), np.arange(5, 10)]
    for f, held in enumerate(halves):
        fit = halves[1 - f]
        coef, icpt = ridge_standardized(X[fit], y[fit], 0.5)
        pred = X[held] @ coef + icpt
        assert abs(cv.fold_mse[f] - np.mean((pred - y[held]) ** 2)) < 1e-10


def test_memorizing_model_has_zero_cv_error():
    x = np.tile(np.arange(5.0), 6)[:, None]
    frame = make_frame(x, x[:, 0] ** 2)
    cv = kfold_cv(frame, ModelSpec("decision_tree", {"max_depth": 8, "min_samples_leaf": 1}), k=3)
    assert cv.mean_mse == 0.0


def test_constant_fold_r2_absent():
    X = np.arange(8.0)[:, None]
    y = np.array([1, 1, 1, 1, 2, 3, 4, 5.0])
    cv = kfold_cv(make_frame(X, y), "ridge", k=2)
    assert cv.fold_r2[0] is None and cv.fold_r2[1] is not None and np.isfinite(cv.fold_mse[0])


# random search

def test_budget_one():
    frame = nonlinear(1, 60)
    best, board = automl_search(frame, SearchSpace({"ridge": {"lam": [1.0]}}, budget=1, folds=2))
    assert len(board) == 1 and best == board[0].spec


def test_search_deterministic_and_reorder_invariant():
    space = {"lasso": {"lam": [0.01, 0.1]}, "ridge": {"lam": [0.1, 1.0, 10.0]},
             "decision_tree": {"max_depth": [2, 4], "min_samples_leaf": [1, 5]}}
    frame = nonlinear(2, 60)
    a = automl_search(frame, SearchSpace(space, budget=5, folds=2, seed=3))[1]
    b = automl_search(frame, SearchSpace(space, budget=5, folds=2, seed=3))[1]
    # family and parameter order reversed; value lists are part of the space's content
    rev = {k: dict(reversed(list(space[k].items()))) for k in reversed(list(space))}
    c = automl_search(frame, SearchSpace(rev, budget=5, folds=2, seed=3))[1]
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b] == [r.to_dict() for r in c]


def test_forest_beats_lasso_on_nonlinear_data():
    space = SearchSpace({"random_forest": {"n_trees": [30], "max_depth": [8], "min_samples_leaf": [2],
                                           "feature_subsample": [0.5]},
                         "lasso": {"lam": [0.01]}}, budget=6, folds=3, seed=5)
    assert {s.family for s in space.sample()} == {"random_forest", "lasso"}
    best, board = automl_search(nonlinear(3, 150), space)
    assert best.family == "random_forest"
    assert board[0].mean_mse < min(r.mean_mse for r in board if r.spec.family == "lasso")


def test_all_candidates_fail():
    space = SearchSpace({"decision_tree": {"max_depth": [0], "min_samples_leaf": [1]}}, budget=2, folds=2)
    with pytest.raises(SearchError, match="every candidate failed"):
        automl_search(nonlinear(4, 30), space)


def test_budget_validated():
    with pytest.raises(SearchError):
        SearchSpace(budget=0)


# report

def test_sample_row_takes_modal_count():
    assert sample_row([3, 1, 2, 1, 2]) == 1


def test_report_rows_sorted_and_perfect_model():
    frame = nonlinear(5, 40)
    specs = [ModelSpec("ridge"), ModelSpec("decision_tree", {"max_depth": 64, "min_samples_leaf": 1}),
             ModelSpec("lasso")]
    report, models = build_report(frame, frame, specs)
    mses = [r.mse for r in report.rows]
    assert mses == sorted(mses)
    top = report.rows[0]
    assert top.name == "decision_tree" and top.mse == 0.0 and top.r2 == 1.0
    assert all(abs(r.rmse ** 2 - r.mse) < 1e-12 for r in report.rows)
    again = score_models(models, frame)
    assert [r.mse for r in again.rows] == mses


def test_failed_model_row_does_not_stop_report():
    frame = nonlinear(6, 40)
    report, models = build_report(frame, frame, [ModelSpec("ridge"),
                                                 ModelSpec("decision_tree", {"max_depth": 0})])
    assert report.rows[0].status == "ok" and report.rows[-1].status == "failed"
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == ["Model", "MSE", "R-Square", "Actual", "Predicted"]
    assert rows[-1][:3] == ["Decision Tree Regressor", "failed", "failed"]
    pairs = list(csv.reader(io.StringIO(pairs_csv(frame, report))))
    assert pairs[0] == ["cell_id", "bucket_start", "actual", "ridge"] and len(pairs) == 41


def test_empty_spec_list():
    with pytest.raises(MetricError):
        build_report(nonlinear(7, 10), nonlinear(8, 10), [])


def test_fixture_models_finite(fixture_split):
    train, test = fixture_split
    report, _ = build_report(train, test, ["ridge", "lasso", "robust"])
    assert all(r.status == "ok" and np.isfinite(r.mse) and np.isfinite(r.r2) for r in report.rows)
    assert report.sample_index == sample_row(test.targets)
