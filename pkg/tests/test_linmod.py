import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accident_forecast.linmod import (LinearModel, fit_elastic_net, fit_huber, fit_ridge, huber_weight,
                                      kkt_check, lambda_max, soft_threshold, standardize)
from oracles import ols, ridge_standardized


def problem(seed, n=20, d=3, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3, d) + rng.normal(size=d)
    beta = rng.normal(size=d)
    y = X @ beta + 1.5 + noise * rng.normal(size=n)
    return X, y


@pytest.mark.parametrize("z,g,out", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-4.0, 1.5, -2.5)])
def test_soft_threshold(z, g, out):
    assert soft_threshold(z, g) == out


def test_soft_threshold_negative_gamma():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_lambda_max_gives_zero_solution():
    X, y = problem(0)
    lm = lambda_max(X, y)
    m = fit_elastic_net(X, y, lm)
    assert np.all(m.coef_std == 0.0)
    assert kkt_check(m, X, y, lm) <= 1e-12
    assert np.any(fit_elastic_net(X, y, 0.9 * lm).coef_std != 0.0)


def test_lambda_zero_matches_ols():
    X, y = problem(1)
    m = fit_elastic_net(X, y, 0.0, tol=1e-13, max_iter=100_000)
    coef, icpt = ols(X, y)
    assert np.max(np.abs(m.coef - coef)) < 1e-8
    assert abs(m.intercept - icpt) < 1e-8


def test_alpha_zero_matches_closed_form_ridge():
    X, y = problem(2)
    m = fit_elastic_net(X, y, 0.3, alpha=0.0, tol=1e-13, max_iter=100_000)
    coef, icpt = ridge_standardized(X, y, 0.3)
    assert np.max(np.abs(m.coef - coef)) < 1e-8
    assert abs(m.intercept - icpt) < 1e-8


def test_fit_ridge_matches_closed_form():
    X, y = problem(3)
    m = fit_ridge(X, y, 0.7, standardize_columns=True)
    coef, icpt = ridge_standardized(X, y, 0.7)
    assert np.allclose(m.coef, coef, atol=1e-10) and abs(m.intercept - icpt) < 1e-10


def test_kkt_after_convergence_and_perturbation():
    X, y = problem(4, n=60, d=8)
    lam = 0.2 * lambda_max(X, y)
    m = fit_elastic_net(X, y, lam, tol=1e-8)
    v = kkt_check(m, X, y, lam)
    assert m.converged and v < 1e-6
    bad = LinearModel.from_dict(m.to_dict())
    bad.coef_std = bad.coef_std.copy()
    bad.coef_std[int(np.argmax(np.abs(bad.coef_std)))] += 0.05
    assert kkt_check(bad, X, y, lam) > 10 * max(v, 1e-9)


def test_objective_non_increasing():
    X, y = problem(5, n=50, d=10)
    m = fit_elastic_net(X, y, 0.05, alpha=0.7)
    obj = np.array(m.objective)
    assert np.all(np.diff(obj) <= 1e-12 * np.abs(obj[:-1]).max())


def test_lasso_path_l1_monotone():
    X, y = problem(6, n=50, d=10)
    lm = lambda_max(X, y)
    norms = [np.abs(fit_elastic_net(X, y, f * lm, tol=1e-10).coef_std).sum() for f in (0.8, 0.4, 0.1, 0.01)]
    assert all(a <= b + 1e-9 for a, b in zip(norms, norms[1:]))


def test_rescaling_a_column_leaves_predictions():
    X, y = problem(7, n=40, d=4)
    Xs = X.copy()
    Xs[:, 1] *= 1000.0
    a = fit_elastic_net(X, y, 0.05, tol=1e-12)
    b = fit_elastic_net(Xs, y, 0.05, tol=1e-12)
    assert np.max(np.abs(a.predict(X) - b.predict(Xs))) < 1e-8


def test_standardized_and_raw_predictions_agree():
    X, y = problem(8, n=40, d=4)
    m = fit_elastic_net(X, y, 0.05, alpha=0.5)
    assert np.max(np.abs(m.predict(X) - m.predict_standardized(X))) < 1e-10


def test_nonconvergence_flagged_not_raised():
    X, y = problem(9, n=40, d=6)
    m = fit_elastic_net(X, y, 1e-4, max_iter=1)
    assert not m.converged and m.n_iter == 1


def test_constant_column_gets_zero_coefficient():
    X, y = problem(10)
    X[:, 1] = 4.0
    m = fit_elastic_net(X, y, 0.01)
    assert m.coef[1] == 0.0
    _, _, scale, const = standardize(X)
    assert const[1] and scale[1] == 1.0


@pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(lam=1.0, alpha=1.5)])
def test_enet_argument_checks(kw):
    X, y = problem(11)
    with pytest.raises(ValueError):
        fit_elastic_net(X, y, **kw)


def test_huber_weight_definition():
    assert huber_weight(2.0, 1.0) == 0.5
    assert huber_weight(-0.3, 1.0) == 1.0


def test_huber_large_delta_is_ols():
    X, y = problem(12)
    m = fit_huber(X, y, delta=1e6, tol=1e-12)
    coef, icpt = ols(X, y)
    assert np.max(np.abs(m.coef - coef)) < 1e-8 and abs(m.intercept - icpt) < 1e-8


def test_huber_resists_outlier():
    x = np.arange(20, dtype=float)
    y = 2 * x + np.random.default_rng(0).normal(scale=0.1, size=20)
    y[17] += 200.0
    hub = fit_huber(x[:, None], y).coef[0]
    slope, _ = ols(x[:, None], y)
    assert abs(hub - 2) < abs(slope[0] - 2)


def test_huber_singular_flags_jitter():
    X, y = problem(13)
    X = np.column_stack([X, X[:, 0] * 2.0 + 1.0])
    m = fit_huber(X, y)
    assert "ridge jitter" in m.flags
    assert np.all(np.isfinite(m.predict(X)))


def test_huber_rejects_bad_delta():
    X, y = problem(14)
    with pytest.raises(ValueError):
        fit_huber(X, y, delta=0.0)


def test_model_serialization_roundtrip():
    X, y = problem(15)
    m = fit_elastic_net(X, y, 0.1, alpha=0.5)
    back = LinearModel.from_dict(m.to_dict())
    assert np.array_equal(back.predict(X), m.predict(X))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), frac=st.sampled_from([0.5, 0.2, 0.05]))
def test_kkt_property(seed, frac):
    X, y = problem(seed, n=30, d=5)
    lam = frac * lambda_max(X, y)
    m = fit_elastic_net(X, y, lam, tol=1e-10)
    assert kkt_check(m, X, y, lam) < 1e-6
