import json
import math

import numpy as np
import pytest

from accident_forecast.seqmodel import (BLOCKS, LstmDivergence, LstmParams, SeqConfig, TrainConfig, fit_lstm,
                                        fit_sequence_model, init_params, lstm_backward, lstm_forward,
                                        sequence_model_from_dict, sequence_model_to_dict)
from oracles import central_difference, lstm_reference


def ref_dict(p):
    return {k: (v if k != "c" else float(v[0])) for k, v in p.blocks().items()}


def test_zero_params_predict_bias():
    p = LstmParams.zeros(3, 4)
    p.c = 1.25
    assert lstm_forward(p, np.ones((5, 3)))[0] == 1.25


def test_single_step_hand_value():
    p = LstmParams.zeros(1, 1)
    p.W_g = np.array([[1.0, 0.0]])
    p.v = np.array([2.0])
    p.c = 0.1
    # i = o = 0.5, g = tanh(1), c1 = 0.5 tanh(1), h = 0.5 tanh(c1)
    want = 2 * 0.5 * math.tanh(0.5 * math.tanh(1.0)) + 0.1
    assert abs(lstm_forward(p, [[1.0]])[0] - want) < 1e-15


def test_forward_matches_scalar_loop():
    rng = np.random.default_rng(0)
    p = init_params(3, 5, seed=1)
    p.c = 0.3
    for _ in range(5):
        w = rng.normal(size=(7, 3))
        assert abs(lstm_forward(p, w)[0] - lstm_reference(ref_dict(p), w)) < 1e-12


def test_batch_equals_single_windows():
    rng = np.random.default_rng(1)
    p = init_params(2, 4, seed=2)
    W = rng.normal(size=(6, 5, 2))
    batch, _ = lstm_forward(p, W)
    assert np.allclose(batch, [lstm_forward(p, w)[0] for w in W], atol=1e-14)


def test_doubling_v_and_c_doubles_prediction():
    rng = np.random.default_rng(2)
    p = init_params(2, 3, seed=3)
    p.c = 0.4
    w = rng.normal(size=(4, 2))
    q = p.copy()
    q.v = 2 * q.v
    q.c = 2 * q.c
    assert abs(lstm_forward(q, w)[0] - 2 * lstm_forward(p, w)[0]) < 1e-12


def test_zero_loss_has_zero_gradients():
    rng = np.random.default_rng(3)
    p = init_params(2, 3, seed=4)
    w = rng.normal(size=(4, 2))
    grads = lstm_backward(p, w, lstm_forward(p, w)[0])
    assert all(np.all(g == 0) for g in grads.values())


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    p = init_params(3, 4, seed=5)
    p.b_i = rng.normal(size=4)
    p.c = 0.2
    W = rng.normal(size=(3, 6, 3))
    y = rng.normal(size=3)
    grads = lstm_backward(p, W, y)
    state = p.blocks()

    def loss():
        q = LstmParams(**{k: v for k, v in state.items() if k != "c"}, c=float(state["c"][0]))
        return float(np.mean((lstm_forward(q, W)[0] - y) ** 2))

    for name in BLOCKS:
        num = central_difference(loss, state[name], 1e-6)
        err = np.abs(num - grads[name]) / np.maximum(1e-6, np.abs(num) + np.abs(grads[name]))
        assert err.max() < 1e-5, name


def test_bias_gradient_is_twice_residual():
    p = init_params(2, 3, seed=6)
    w = np.ones((3, 2))
    pred = lstm_forward(p, w)[0]
    assert abs(lstm_backward(p, w, pred - 1.5)["c"][0] - 3.0) < 1e-12


def test_constant_target_is_learned():
    rng = np.random.default_rng(5)
    W = rng.normal(size=(64, 5, 2))
    model = fit_lstm(W, np.full(64, 3.0), TrainConfig(epochs=60, lr=0.05, hidden=4, batch_size=16))
    assert model.losses[-1] < 0.05 * model.losses[0]
    assert np.max(np.abs(model.predict(W) - 3.0)) < 0.3


def test_training_deterministic():
    rng = np.random.default_rng(6)
    W = rng.normal(size=(40, 4, 2))
    y = W[:, -1, 0]
    cfg = TrainConfig(epochs=3, hidden=3, batch_size=8)
    a, b = fit_lstm(W, y, cfg), fit_lstm(W, y, cfg)
    assert a.losses == b.losses
    assert np.array_equal(a.predict(W), b.predict(W))


def test_zero_learning_rate_leaves_params():
    rng = np.random.default_rng(7)
    W = rng.normal(size=(20, 3, 2))
    cfg = TrainConfig(epochs=2, optimizer="sgd", lr=0.0, hidden=3)
    p0 = init_params(2, 3, seed=cfg.seed)
    m = fit_lstm(W, rng.normal(size=20), cfg, params=p0)
    assert all(np.array_equal(a, b) for a, b in zip(m.params.blocks().values(), p0.blocks().values()))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    rng = np.random.default_rng(8)
    W = rng.normal(size=(10, 3, 2))
    cfg = TrainConfig(epochs=5, optimizer="sgd", lr=1e300, clip=0.0, hidden=2)
    with pytest.raises(LstmDivergence) as err:
        fit_lstm(W, np.full(10, 1e200), cfg)
    assert err.value.epoch >= 0


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(optimizer="rmsprop")])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_params_dict_roundtrip_and_shape_check():
    p = init_params(3, 2, seed=9)
    d = json.loads(json.dumps(p.to_dict()))
    back = LstmParams.from_dict(d)
    w = np.ones((4, 3))
    assert lstm_forward(back, w)[0] == lstm_forward(p, w)[0]
    d["shape"]["h"] = 3
    with pytest.raises(ValueError):
        LstmParams.from_dict(d)


def test_sequence_model_on_frames(fixture_split):
    train, test = fixture_split
    cfg = SeqConfig(window=5, train=TrainConfig(epochs=2, hidden=4))
    sm = fit_sequence_model(train, cfg)
    pred = sm.predict(test)
    assert pred.shape == (test.n_rows,) and np.all(np.isfinite(pred))
    back = sequence_model_from_dict(json.loads(json.dumps(sequence_model_to_dict(sm))))
    assert np.array_equal(back.predict(test), pred)
