"""Single-layer LSTM regressor trained by backpropagation through time.

Gates follow the usual layout: i, f, o are logistic and g is tanh, each fed
``W . [x_t; h_{t-1}] + b``; ``c_t = f*c_{t-1} + i*g`` and ``h_t = o*tanh(c_t)``.
The prediction is ``v . h_T + c``. Windows are batched as (B, T, d) arrays.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import FeatureFrame

GATES = ("i", "f", "o", "g")
BLOCKS = ("W_i", "W_f", "W_o", "W_g", "b_i", "b_f", "b_o", "b_g", "v", "c")


class LstmDivergence(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch} (loss not finite)")
        self.epoch = epoch


@dataclass
class LstmParams:
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    v: np.ndarray
    c: float

    @property
    def hidden(self) -> int:
        return self.v.size

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1] - self.v.size

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: np.atleast_1d(np.asarray(getattr(self, name), dtype=float)) for name in BLOCKS}

    def copy(self) -> "LstmParams":
        d = self.blocks()
        return LstmParams(**{k: v.copy() for k, v in d.items() if k != "c"}, c=float(d["c"][0]))

    @classmethod
    def zeros(cls, d: int, h: int) -> "LstmParams":
        W = {f"W_{g}": np.zeros((h, d + h)) for g in GATES}
        b = {f"b_{g}": np.zeros(h) for g in GATES}
        return cls(**W, **b, v=np.zeros(h), c=0.0)

    def to_dict(self) -> dict:
        return {"shape": {"d": self.input_dim, "h": self.hidden},
                **{k: v.tolist() for k, v in self.blocks().items() if k != "c"}, "c": float(self.c)}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmParams":
        h, dim = d["shape"]["h"], d["shape"]["d"]
        kw = {k: np.array(d[k], dtype=float) for k in BLOCKS if k != "c"}
        for g in GATES:
            if kw[f"W_{g}"].shape != (h, dim + h) or kw[f"b_{g}"].shape != (h,):
                raise ValueError("parameter shapes disagree with the shape header")
        return cls(**kw, c=float(d["c"]))


def init_params(d: int, h: int = 32, seed: int = 42) -> LstmParams:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases except forget = 1."""
    rng = np.random.default_rng(seed)
    s = 1.0 / math.sqrt(h)
    p = LstmParams.zeros(d, h)
    for g in GATES:
        setattr(p, f"W_{g}", rng.uniform(-s, s, (h, d + h)))
    p.b_f = np.ones(h)
    p.v = rng.uniform(-s, s, h)
    return p


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _stacked(p: LstmParams):
    return np.vstack([p.W_i, p.W_f, p.W_o, p.W_g]), np.concatenate([p.b_i, p.b_f, p.b_o, p.b_g])


def lstm_forward(params: LstmParams, window):
    """Prediction for one (T, d) window or a (B, T, d) batch, plus the cache."""
    X = np.asarray(window, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, T, d = X.shape
    if T < 1:
        raise ValueError("window length must be >= 1")
    H = params.hidden
    W, b = _stacked(params)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        z = np.concatenate([X[:, t], h], axis=1)
        a = z @ W.T + b
        i, f, o = _sigmoid(a[:, :H]), _sigmoid(a[:, H:2 * H]), _sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((z, i, f, o, g, c_prev, tc))
    pred = h @ params.v + params.c
    cache = {"steps": steps, "h_T": h, "d": d, "single": single}
    return (float(pred[0]) if single else pred), cache


def lstm_backward(params: LstmParams, window, target, cache=None) -> dict[str, np.ndarray]:
    """Gradients of the squared error, averaged over the batch."""
    if cache is None:
        _, cache = lstm_forward(params, window)
    h_T = cache["h_T"]
    B = h_T.shape[0]
    pred = h_T @ params.v + params.c
    target = np.atleast_1d(np.asarray(target, dtype=float))
    dpred = 2.0 * (pred - target) / B
    H, d = params.hidden, cache["d"]
    W, _ = _stacked(params)
    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    dh = np.outer(dpred, params.v)
    dcell = np.zeros((B, H))
    for z, i, f, o, g, c_prev, tc in reversed(cache["steps"]):
        do = dh * tc
        dcs = dcell + dh * o * (1.0 - tc * tc)
        da = np.concatenate([dcs * g * i * (1.0 - i), dcs * c_prev * f * (1.0 - f),
                             do * o * (1.0 - o), dcs * i * (1.0 - g * g)], axis=1)
        dcell = dcs * f
        dW += da.T @ z
        db += da.sum(axis=0)
        dh = (da @ W)[:, d:]
    grads = {}
    for k, g in enumerate(GATES):
        grads[f"W_{g}"] = dW[k * H:(k + 1) * H]
        grads[f"b_{g}"] = db[k * H:(k + 1) * H]
    grads["v"] = h_T.T @ dpred
    grads["c"] = np.array([dpred.sum()])
    return grads


def _clip(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


@dataclass
class TrainConfig:
    epochs: int = 40
    optimizer: str = "adam"
    lr: float = 1e-3
    clip: float = 5.0
    batch_size: int = 32
    hidden: int = 32
    seed: int = 42
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LstmModel:
    params: LstmParams
    losses: list[float]
    config: TrainConfig

    def predict(self, windows) -> np.ndarray:
        pred, _ = lstm_forward(self.params, np.asarray(windows, dtype=float).reshape(-1, *np.shape(windows)[-2:]))
        return np.asarray(pred)


def fit_lstm(windows, targets, config: TrainConfig = TrainConfig(), params: LstmParams | None = None) -> LstmModel:
    """Mini-batch training with global-norm clipping.

    ``losses[e]`` is the mean squared error over all windows after epoch e.
    Batches are drawn by a seeded shuffle, so equal seeds give equal curves.
    """
    X = np.asarray(windows, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 3 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("windows must be (N, T, d) with one target each")
    rng = np.random.default_rng(config.seed)
    p = init_params(X.shape[2], config.hidden, config.seed) if params is None else params.copy()
    state = {k: v.copy() for k, v in p.blocks().items()}
    m = {k: np.zeros_like(v) for k, v in state.items()}
    s = {k: np.zeros_like(v) for k, v in state.items()}
    b1, b2 = config.betas
    step = 0
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(y.size)
        for lo in range(0, y.size, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            grads = lstm_backward(p, X[idx], y[idx])
            _clip(grads, config.clip)
            step += 1
            for k, g in grads.items():
                if config.optimizer == "sgd":
                    state[k] -= config.lr * g
                else:
                    m[k] = b1 * m[k] + (1 - b1) * g
                    s[k] = b2 * s[k] + (1 - b2) * g * g
                    mh = m[k] / (1 - b1 ** step)
                    sh = s[k] / (1 - b2 ** step)
                    state[k] -= config.lr * mh / (np.sqrt(sh) + config.eps)
            p = LstmParams(**{k: v for k, v in state.items() if k != "c"}, c=float(state["c"][0]))
        pred, _ = lstm_forward(p, X)
        loss = float(np.mean((pred - y) ** 2))
        if not math.isfinite(loss):
            raise LstmDivergence(epoch)
        losses.append(loss)
    return LstmModel(p.copy(), losses, config)


# ------------------------------------------------------------ frame windows

@dataclass
class SeqConfig:
    window: int = 28
    # short schedule: a few hundred windows overfit within ~20 epochs
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8))


def _step_columns(frame: FeatureFrame) -> list[int]:
    """Non-lag feature columns followed by lag_1 (the previous count)."""
    names = frame.column_names
    if "lag_1" not in names:
        raise ValueError("sequence features need the lag_1 column")
    keep = [j for j, c in enumerate(frame.columns) if c.group != "lag"]
    return keep + [names.index("lag_1")]


def _cell_windows(steps: np.ndarray, T: int) -> np.ndarray:
    """Window ending at each row; short prefixes repeat the first step."""
    n = steps.shape[0]
    pos = np.arange(n)[:, None] + np.arange(-T + 1, 1)[None, :]
    return steps[np.clip(pos, 0, None)]


@dataclass
class SequenceModel:
    """LSTM over per-cell windows of standardized step vectors.

    A row's window holds the T most recent steps of its cell ending at the
    row itself; each step is that bucket's exogenous features plus the
    previous bucket's count, so the target bucket's count is never an input.
    """

    model: LstmModel
    columns: list[int]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    window: int
    history: dict[str, dict] = field(default_factory=dict)

    def _windows(self, frame: FeatureFrame, with_history: bool):
        steps = (frame.matrix[:, self.columns] - self.x_mean) / self.x_scale
        out = np.empty((frame.n_rows, self.window, len(self.columns)))
        for cell in np.unique(frame.cell_ids):
            rows = np.flatnonzero(frame.cell_ids == cell)
            rows = rows[np.argsort(frame.bucket_starts[rows], kind="stable")]
            seq = steps[rows]
            pad = 0
            hist = self.history.get(str(cell)) if with_history else None
            if hist is not None:
                earlier = np.array(hist["starts"], dtype="datetime64[s]") < frame.bucket_starts[rows[0]]
                prev = np.asarray(hist["steps"], dtype=float).reshape(-1, len(self.columns))[earlier]
                pad = prev.shape[0]
                seq = np.vstack([prev, seq])
            out[rows] = _cell_windows(seq, self.window)[pad:]
        return out

    def predict(self, frame: FeatureFrame) -> np.ndarray:
        if frame.n_rows == 0:
            return np.zeros(0)
        z = self.model.predict(self._windows(frame, True))
        return z * self.y_scale + self.y_mean


def fit_sequence_model(frame: FeatureFrame, config: SeqConfig = SeqConfig()) -> SequenceModel:
    """Train on windows drawn from ``frame`` only; windows shorter than T are dropped."""
    cols = _step_columns(frame)
    raw = frame.matrix[:, cols]
    x_mean = raw.mean(axis=0)
    x_scale = raw.std(axis=0)
    x_scale = np.where(x_scale == 0, 1.0, x_scale)
    y_mean = float(frame.targets.mean())
    y_scale = float(frame.targets.std()) or 1.0
    sm = SequenceModel(None, cols, x_mean, x_scale, y_mean, y_scale, config.window)
    windows = sm._windows(frame, False)
    full = np.zeros(frame.n_rows, dtype=bool)
    T = config.window
    for cell in np.unique(frame.cell_ids):
        rows = np.flatnonzero(frame.cell_ids == cell)
        rows = rows[np.argsort(frame.bucket_starts[rows], kind="stable")]
        full[rows[T - 1:]] = True
        tail = rows[-(T - 1):] if T > 1 else rows[:0]
        sm.history[str(cell)] = {
            "starts": frame.bucket_starts[tail].astype("datetime64[s]").astype(str).tolist(),
            "steps": ((raw[tail] - x_mean) / x_scale).tolist(),
        }
    if not full.any():
        raise ValueError(f"no cell has {T} buckets of training history")
    sm.model = fit_lstm(windows[full], (frame.targets[full] - y_mean) / y_scale, config.train)
    return sm


def sequence_model_to_dict(sm: SequenceModel) -> dict:
    return {"params": sm.model.params.to_dict(), "losses": sm.model.losses,
            "train": asdict(sm.model.config), "columns": sm.columns,
            "x_mean": sm.x_mean.tolist(), "x_scale": sm.x_scale.tolist(),
            "y_mean": sm.y_mean, "y_scale": sm.y_scale, "window": sm.window, "history": sm.history}


def sequence_model_from_dict(d: dict) -> SequenceModel:
    train = dict(d["train"])
    train["betas"] = tuple(train["betas"])
    model = LstmModel(LstmParams.from_dict(d["params"]), list(d["losses"]), TrainConfig(**train))
    return SequenceModel(model, list(d["columns"]), np.array(d["x_mean"]), np.array(d["x_scale"]),
                         float(d["y_mean"]), float(d["y_scale"]), int(d["window"]), d["history"])
