"""Regression trees (CART) with variance-reduction splits.

Two split finders share one gain definition, the drop in weighted sum of
squared errors::

    gain = SSE(parent) - SSE(left) - SSE(right)

``best_split`` scans every midpoint between consecutive distinct values;
``histogram_split`` only considers a fixed set of bin edges per feature.
Rows with ``x <= threshold`` go left.
"""
from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass

import numpy as np

TREE_FORMAT = "accident-forecast/tree"
TREE_VERSION = 1

# Gains within this relative distance of the best are ties; ties resolve to
# the smallest feature index, then the smallest threshold.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int | None = 12
    min_samples_leaf: int = 5
    min_gain: float = 1e-12
    feature_subsample: float = 1.0
    split_mode: str = "exhaustive"  # or "histogram"
    n_bins: int = 64
    max_leaves: int | None = None  # set -> leaf-wise (best-first) growth
    seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_gain < 0:
            raise ValueError("min_gain must be >= 0")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise ValueError("feature_subsample must be in (0, 1]")
        if self.split_mode not in ("exhaustive", "histogram"):
            raise ValueError(f"unknown split_mode {self.split_mode!r}")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.max_leaves is not None and self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")


def _midpoint(lo: float, hi: float) -> float:
    t = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint can round up onto hi
    return float(lo if t >= hi else t)


def _pick(gain: np.ndarray) -> tuple[int, float] | None:
    """Index of the best gain in a feature-major flattened array, with ties
    resolved to the first position."""
    best = gain.max() if gain.size else -np.inf
    if not np.isfinite(best) or best <= 0.0:
        return None
    ties = gain >= best - TIE_RTOL * best
    k = int(np.argmax(ties))
    return k, float(gain[k])


def _sorted_gains(xs: np.ndarray, ys: np.ndarray, ws: np.ndarray, min_leaf: int) -> np.ndarray:
    """Gains for every cut position of presorted columns.

    ``xs``, ``ys``, ``ws`` are (n, k); returns (k, n-1) with -inf at
    invalid cuts. Targets are centred on the weighted node mean before the
    prefix sums, which keeps the one-pass SSE formula well conditioned.
    """
    n = xs.shape[0]
    W = ws[:, 0].sum()
    mu = (ws[:, 0] * ys[:, 0]).sum() / W
    wy = ws * (ys - mu)
    S = wy[:, 0].sum()
    wl = np.cumsum(ws, axis=0)[:-1]
    sl = np.cumsum(wy, axis=0)[:-1]
    wr = W - wl
    sr = S - sl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sl * sl / wl + sr * sr / wr - S * S / W
    count_left = np.arange(1, n)[:, None]
    valid = (xs[1:] > xs[:-1]) & (count_left >= min_leaf) & (n - count_left >= min_leaf)
    valid &= (wl > 0) & (wr > 0)
    gain = np.where(valid, gain, -np.inf)
    return gain.T


def _node_exhaustive(X, y, w, features, min_leaf):
    Xn = X[:, features]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    gain = _sorted_gains(xs, y[order], w[order], min_leaf)
    hit = _pick(gain.ravel())
    if hit is None:
        return None
    k, g = hit
    j, p = divmod(k, xs.shape[0] - 1)
    return int(features[j]), _midpoint(xs[p, j], xs[p + 1, j]), g


def best_split(x, y, weights=None, min_samples_leaf: int = 1, min_gain: float = 1e-12):
    """Best variance-reduction split of one column.

    Returns ``(threshold, gain)`` or ``None`` when no admissible split
    improves strictly on the parent.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not (x.shape == y.shape == w.shape) or x.size < 2:
        raise ValueError("x, y, weights must share a length >= 2")
    if np.all(y == y[0]):
        return None
    hit = _node_exhaustive(x[:, None], y, w, np.array([0]), min_samples_leaf)
    if hit is None or hit[2] < min_gain:
        return None
    return hit[1], hit[2]


def bin_edges(x, n_bins: int) -> np.ndarray:
    """Equal-frequency split candidates for one column.

    Every edge is the midpoint between two consecutive distinct values, so
    with ``n_bins`` at least the number of distinct values the edges are
    exactly the exhaustive candidate set.
    """
    x = np.asarray(x, dtype=float)
    u = np.unique(x)
    if u.size < 2:
        return np.empty(0)
    if u.size <= n_bins:
        lo, hi = u[:-1], u[1:]
    else:
        qs = np.quantile(x, np.arange(1, n_bins) / n_bins)
        j = np.searchsorted(u, qs, side="right") - 1
        j = np.unique(j[(j >= 0) & (j < u.size - 1)])
        lo, hi = u[j], u[j + 1]
    t = lo + (hi - lo) / 2.0
    return np.where(t >= hi, lo, t)


class Binner:
    """Per-feature bin edges computed once per tree and the coded matrix."""

    def __init__(self, X: np.ndarray, n_bins: int):
        self.edges = [bin_edges(X[:, j], n_bins) for j in range(X.shape[1])]
        self.n_codes = max(1, max((e.size + 1 for e in self.edges), default=1))
        self.codes = np.empty(X.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            self.codes[:, j] = np.searchsorted(e, X[:, j], side="left")


def _node_histogram(X, y, w, features, min_leaf, binner: Binner, exact_gain: bool = False):
    n = y.size
    B = binner.n_codes
    k = features.size
    codes = binner.codes[:, features] + (np.arange(k) * B)[None, :]
    flat = codes.ravel()
    W = w.sum()
    mu = (w * y).sum() / W
    wy = w * (y - mu)
    hw = np.bincount(flat, weights=np.repeat(w, k), minlength=k * B).reshape(k, B)
    hs = np.bincount(flat, weights=np.repeat(wy, k), minlength=k * B).reshape(k, B)
    hc = np.bincount(flat, minlength=k * B).reshape(k, B)
    S = wy.sum()
    wl = np.cumsum(hw, axis=1)[:, :-1]
    sl = np.cumsum(hs, axis=1)[:, :-1]
    cl = np.cumsum(hc, axis=1)[:, :-1]
    wr, sr = W - wl, S - sl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sl * sl / wl + sr * sr / wr - S * S / W
    n_edges = np.array([binner.edges[f].size for f in features])
    valid = (np.arange(B - 1)[None, :] < n_edges[:, None])
    valid &= (cl >= min_leaf) & (n - cl >= min_leaf) & (wl > 0) & (wr > 0)
    # edges separated only by empty bins give bit-identical gains, so the
    # tie rule lands on the first of them
    gain = np.where(valid, gain, -np.inf)
    hit = _pick(gain.ravel())
    if hit is None:
        return None
    idx, g = hit
    j, e = divmod(idx, B - 1)
    f = int(features[j])
    col = X[:, f]
    left = binner.codes[:, f] <= e
    if exact_gain:
        # rescore the cut in the exhaustive finder's summation order
        order = np.argsort(col, kind="stable")
        exact = _sorted_gains(col[order][:, None], y[order][:, None], w[order][:, None], min_leaf)
        g = float(exact[0, int(left.sum()) - 1])
    # place the threshold between the node's own neighbours, as the
    # exhaustive finder would
    return f, _midpoint(col[left].max(), col[~left].min()), g


def histogram_split(x, y, n_bins: int, weights=None, min_samples_leaf: int = 1,
                    min_gain: float = 1e-12):
    """Like :func:`best_split` but restricted to equal-frequency bin edges."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not (x.shape == y.shape == w.shape) or x.size < 2:
        raise ValueError("x, y, weights must share a length >= 2")
    if np.all(y == y[0]):
        return None
    X = x[:, None]
    hit = _node_histogram(X, y, w, np.array([0]), min_samples_leaf, Binner(X, n_bins), exact_gain=True)
    if hit is None or hit[2] < min_gain:
        return None
    return hit[1], hit[2]


@dataclass
class RegressionTree:
    """Array-encoded binary tree in preorder. ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        used = self.feature[self.feature >= 0]
        if used.size:
            if used.max() >= X.shape[1]:
                raise ValueError(f"tree references feature {int(used.max())}, "
                                 f"input has {X.shape[1]} columns")
            if np.isnan(X[:, np.unique(used)]).any():
                raise ValueError("missing value in a feature the tree splits on")
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                return node
            cur = node[active]
            go_left = X[active, f[active]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                nodes.append({"f": int(self.feature[i]), "t": float(self.threshold[i]),
                              "l": int(self.left[i]), "r": int(self.right[i]),
                              "n": int(self.n_samples[i]), "v": float(self.value[i])})
            else:
                nodes.append({"v": float(self.value[i]), "n": int(self.n_samples[i])})
        return {"format": TREE_FORMAT, "version": TREE_VERSION, "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        if d.get("format") != TREE_FORMAT or d.get("version") != TREE_VERSION:
            raise ValueError("not a serialized tree of a supported version")
        nodes = d["nodes"]
        return cls(
            feature=np.array([nd.get("f", -1) for nd in nodes], dtype=np.int64),
            threshold=np.array([nd.get("t", 0.0) for nd in nodes], dtype=float),
            left=np.array([nd.get("l", -1) for nd in nodes], dtype=np.int64),
            right=np.array([nd.get("r", -1) for nd in nodes], dtype=np.int64),
            value=np.array([nd["v"] for nd in nodes], dtype=float),
            n_samples=np.array([nd["n"] for nd in nodes], dtype=np.int64),
        )


def predict_tree(tree: RegressionTree, row) -> float:
    """Route a single row to its leaf."""
    return float(tree.predict(np.asarray(row, dtype=float)[None, :])[0])


class _Builder:
    def __init__(self, X, y, w, config: TreeConfig, rng: np.random.Generator):
        self.X, self.y, self.w = X, y, w
        self.cfg = config
        self.rng = rng
        d = X.shape[1]
        self.n_features = max(1, int(round(config.feature_subsample * d)))
        self.binner = Binner(X, config.n_bins) if config.split_mode == "histogram" else None
        self.feature, self.threshold, self.children = [], [], []
        self.value, self.count = [], []

    def features(self) -> np.ndarray:
        d = self.X.shape[1]
        if self.n_features >= d:
            return np.arange(d)
        return np.sort(self.rng.choice(d, size=self.n_features, replace=False))

    def find(self, idx):
        cfg = self.cfg
        y = self.y[idx]
        if idx.size < 2 * cfg.min_samples_leaf or np.all(y == y[0]):
            return None
        feats = self.features()
        if self.binner is None:
            hit = _node_exhaustive(self.X[idx], y, self.w[idx], feats, cfg.min_samples_leaf)
        else:
            sub = _SubBinner(self.binner, idx)
            hit = _node_histogram(self.X[idx], y, self.w[idx], feats, cfg.min_samples_leaf, sub)
        if hit is None or hit[2] < cfg.min_gain:
            return None
        f, t, g = hit
        mask = self.X[idx, f] <= t
        return f, t, g, idx[mask], idx[~mask]

    def new_node(self, idx) -> int:
        w = self.w[idx]
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.children.append([-1, -1])
        self.value.append(float(np.dot(w, self.y[idx]) / w.sum()))
        self.count.append(int(idx.size))
        return len(self.feature) - 1

    def attach(self, node, split):
        f, t, _, li, ri = split
        self.feature[node] = f
        self.threshold[node] = t
        left, right = self.new_node(li), self.new_node(ri)
        self.children[node] = [left, right]
        return left, right

    def depth_first(self):
        max_depth = self.cfg.max_depth
        root = self.new_node(np.arange(self.y.size))
        stack = [(root, np.arange(self.y.size), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if max_depth is not None and depth >= max_depth:
                continue
            split = self.find(idx)
            if split is None:
                continue
            left, right = self.attach(node, split)
            stack.append((right, split[4], depth + 1))
            stack.append((left, split[3], depth + 1))

    def best_first(self, max_leaves: int):
        max_depth = self.cfg.max_depth
        root = self.new_node(np.arange(self.y.size))
        heap = []
        leaves = 1

        def push(node, idx, depth):
            if max_depth is not None and depth >= max_depth:
                return
            split = self.find(idx)
            if split is not None:
                heapq.heappush(heap, (-split[2], node, depth, split))

        push(root, np.arange(self.y.size), 0)
        while heap and leaves < max_leaves:
            _, node, depth, split = heapq.heappop(heap)
            left, right = self.attach(node, split)
            leaves += 1
            push(left, split[3], depth + 1)
            push(right, split[4], depth + 1)

    def finish(self) -> RegressionTree:
        # renumber into preorder
        order, stack = [], [0]
        while stack:
            i = stack.pop()
            order.append(i)
            if self.feature[i] >= 0:
                stack.append(self.children[i][1])
                stack.append(self.children[i][0])
        new_id = {old: new for new, old in enumerate(order)}
        feature = np.array([self.feature[i] for i in order], dtype=np.int64)
        left = np.array([new_id[self.children[i][0]] if self.feature[i] >= 0 else -1 for i in order],
                        dtype=np.int64)
        right = np.array([new_id[self.children[i][1]] if self.feature[i] >= 0 else -1 for i in order],
                         dtype=np.int64)
        return RegressionTree(
            feature=feature,
            threshold=np.array([self.threshold[i] for i in order], dtype=float),
            left=left, right=right,
            value=np.array([self.value[i] for i in order], dtype=float),
            n_samples=np.array([self.count[i] for i in order], dtype=np.int64),
        )


class _SubBinner:
    """View of a tree-level Binner restricted to one node's rows."""

    def __init__(self, binner: Binner, idx):
        self.edges = binner.edges
        self.n_codes = binner.n_codes
        self.codes = binner.codes[idx]


def fit_tree(X, y, config: TreeConfig = TreeConfig(), weights=None,
             rng: np.random.Generator | None = None) -> RegressionTree:
    """Grow a regression tree greedily.

    Depth-first by default; best-first (largest gain first) when
    ``config.max_leaves`` is set. Bins for histogram mode are computed once
    from the rows passed in.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot fit a tree on an empty frame")
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one target per row")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    b = _Builder(X, y, w, config, rng)
    if config.max_leaves is None:
        b.depth_first()
    else:
        b.best_first(config.max_leaves)
    return b.finish()


def tree_config_from_dict(d: dict) -> TreeConfig:
    return TreeConfig(**d)


def tree_config_to_dict(cfg: TreeConfig) -> dict:
    return asdict(cfg)
