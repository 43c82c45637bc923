"""Tree ensembles: random forest, AdaBoost.R2, gradient boosting, stacking."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .cart import RegressionTree, TreeConfig, fit_tree
from .linmod import LinearModel, fit_ridge


def tree_seed(master: int, index: int) -> np.random.SeedSequence:
    """Per-tree seed derived from (master seed, tree index)."""
    return np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, index])


# ------------------------------------------------------------ random forest

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    bootstrap: bool = True
    feature_subsample: float = 1.0 / 3.0
    tree: TreeConfig = TreeConfig()
    seed: int = 42

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass
class Forest:
    trees: list[RegressionTree]
    config: ForestConfig
    oob_mse: float | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)


def fit_forest(X, y, config: ForestConfig = ForestConfig(), threads: int = 1) -> Forest:
    """Bagged regression trees with per-split feature subsampling.

    Each tree draws its bootstrap sample and its feature subsets from its
    own seed, so the result does not depend on ``threads``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise ValueError("cannot fit a forest on an empty frame")
    tree_cfg = replace(config.tree, feature_subsample=config.feature_subsample)

    def grow(i):
        rng = np.random.default_rng(tree_seed(config.seed, i))
        if config.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        return fit_tree(X[idx], y[idx], tree_cfg, rng=rng), idx

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grown = list(pool.map(grow, range(config.n_trees)))
    else:
        grown = [grow(i) for i in range(config.n_trees)]

    oob = None
    if config.bootstrap:
        sums = np.zeros(n)
        hits = np.zeros(n)
        for tree, idx in grown:
            out = np.ones(n, dtype=bool)
            out[idx] = False
            if out.any():
                sums[out] += tree.predict(X[out])
                hits[out] += 1
        seen = hits > 0
        if seen.any():
            oob = float(np.mean((sums[seen] / hits[seen] - y[seen]) ** 2))
    return Forest([t for t, _ in grown], config, oob)


# ------------------------------------------------------------- AdaBoost.R2

class NoUsableRound(RuntimeError):
    pass


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Smallest value whose cumulative weight reaches half the total."""
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    k = int(np.searchsorted(cw, 0.5 * cw[-1], side="left"))
    return float(values[order][min(k, len(values) - 1)])


@dataclass
class AdaBoostR2:
    trees: list[RegressionTree]
    estimator_weights: np.ndarray  # ln(1/beta); inf for a zero-loss round
    weight_history: list[np.ndarray] = field(default_factory=list)
    avg_losses: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def staged(self, X) -> np.ndarray:
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        preds = self.staged(np.asarray(X, dtype=float))
        w = self.estimator_weights
        if np.isinf(w).any():
            keep = np.isinf(w)
            preds, w = preds[keep], np.ones(int(keep.sum()))
        return np.array([weighted_median(preds[:, i], w) for i in range(preds.shape[1])])


def fit_adaboost_r2(X, y, n_rounds: int = 50, base: TreeConfig = TreeConfig(max_depth=3, min_samples_leaf=1),
                    seed: int = 42) -> AdaBoostR2:
    """AdaBoost.R2 with the linear loss, fitting each round on weighted SSE.

    A round with average loss >= 0.5 is discarded and ends boosting; a round
    with zero loss is kept and ends boosting.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.full(n, 1.0 / n)
    history = [w.copy()]
    trees, alphas, losses = [], [], []
    for t in range(n_rounds):
        rng = np.random.default_rng(tree_seed(seed, t))
        tree = fit_tree(X, y, base, weights=w, rng=rng)
        err = np.abs(tree.predict(X) - y)
        emax = err.max()
        loss = err / emax if emax > 0 else np.zeros(n)
        avg = float(np.dot(w, loss))
        if avg >= 0.5:
            break
        trees.append(tree)
        losses.append(avg)
        if avg == 0.0:
            alphas.append(math.inf)
            break
        beta = avg / (1.0 - avg)
        alphas.append(math.log(1.0 / beta))
        w = w * beta ** (1.0 - loss)
        w /= w.sum()
        history.append(w.copy())
    if not trees:
        raise NoUsableRound("no usable round: first round's average loss was >= 0.5")
    return AdaBoostR2(trees, np.array(alphas), history, losses,
                      {"n_rounds": n_rounds, "base": asdict(base), "seed": seed})


# -------------------------------------------------------- gradient boosting

@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 200
    learning_rate: float = 0.1
    growth: str = "leaf-wise"   # or "depth-wise"
    max_leaves: int = 31
    max_depth: int | None = None
    n_bins: int = 64
    min_samples_leaf: int = 5
    seed: int = 42

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.growth not in ("leaf-wise", "depth-wise"):
            raise ValueError(f"unknown growth {self.growth!r}")

    def tree_config(self) -> TreeConfig:
        depth = self.max_depth
        if self.growth == "depth-wise" and depth is None:
            depth = 6
        return TreeConfig(max_depth=depth, min_samples_leaf=self.min_samples_leaf,
                          split_mode="histogram", n_bins=self.n_bins,
                          max_leaves=self.max_leaves if self.growth == "leaf-wise" else None,
                          seed=self.seed)


@dataclass
class GradientBoosting:
    init: float
    trees: list[RegressionTree]
    learning_rate: float
    train_loss: list[float]
    config: BoostConfig

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def fit_gbdt(X, y, config: BoostConfig = BoostConfig()) -> GradientBoosting:
    """Squared-loss boosting of histogram trees on residuals.

    ``train_loss[m]`` is the training MSE after ``m`` rounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    init = float(y.mean())
    F = np.full(y.size, init)
    losses = [float(np.mean((y - F) ** 2))]
    trees = []
    tcfg = config.tree_config()
    for m in range(config.n_rounds):
        resid = y - F
        if np.all(resid == resid[0]):
            break
        rng = np.random.default_rng(tree_seed(config.seed, m))
        tree = fit_tree(X, resid, tcfg, rng=rng)
        trees.append(tree)
        F = F + config.learning_rate * tree.predict(X)
        losses.append(float(np.mean((y - F) ** 2)))
    return GradientBoosting(init, trees, config.learning_rate, losses, config)


# ----------------------------------------------------------------- stacking

class StackingError(RuntimeError):
    pass


@dataclass
class Stack:
    names: list[str]
    bases: list
    meta: LinearModel
    oof: np.ndarray

    def base_predictions(self, data) -> np.ndarray:
        return np.column_stack([b.predict(data) for b in self.bases])

    def predict(self, data) -> np.ndarray:
        return self.meta.predict(self.base_predictions(data))


def out_of_fold(data, y, fit: Callable, fold_ids: np.ndarray, take: Callable, name: str = "base",
                pair: Callable = None):
    """Row i is predicted by a model fitted without fold(i).

    ``pair(data, fit_idx, pred_idx)``, when given, replaces the two ``take``
    calls so that derived columns can be refit on the fitting rows only.
    """
    y = np.asarray(y, dtype=float)
    oof = np.full(y.size, np.nan)
    for k in np.unique(fold_ids):
        inside = np.flatnonzero(fold_ids == k)
        outside = np.flatnonzero(fold_ids != k)
        if pair is None:
            fit_part, pred_part = take(data, outside), take(data, inside)
        else:
            fit_part, pred_part = pair(data, outside, inside)
        try:
            model = fit(fit_part)
            oof[inside] = model.predict(pred_part)
        except Exception as exc:
            raise StackingError(f"base {name!r} failed on fold {int(k)}: {exc}") from exc
    return oof


def fit_stacking(data, y, bases: list[tuple[str, Callable]], fold_ids, meta_lam: float = 1e-3,
                 take: Callable = None, threads: int = 1, pair: Callable = None) -> Stack:
    """Stack ``bases`` under a ridge meta-learner fitted on out-of-fold predictions.

    ``bases`` are ``(name, fit)`` pairs where ``fit(data)`` returns an object
    with ``predict(data)``; ``take(data, idx)`` selects rows. Bases are refit
    on all rows for the final model. ``pair`` is passed to ``out_of_fold``.
    """
    if not bases:
        raise ValueError("stacking needs at least one base model")
    if take is None:
        def take(d, idx):
            return d[idx]
    fold_ids = np.asarray(fold_ids)

    def oof_for(entry):
        name, fit = entry
        return out_of_fold(data, y, fit, fold_ids, take, name, pair)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(oof_for, bases))
    else:
        cols = [oof_for(b) for b in bases]
    Z = np.column_stack(cols)
    meta = fit_ridge(Z, y, meta_lam)
    fitted = []
    for name, fit in bases:
        try:
            fitted.append(fit(data))
        except Exception as exc:
            raise StackingError(f"base {name!r} failed on the full refit: {exc}") from exc
    return Stack([n for n, _ in bases], fitted, meta, Z)
