"""Penalized and robust linear regression.

All fits standardize the columns internally (mean 0, population std 1) and
report coefficients in both spaces. Elastic net minimizes::

    (1/2n) ||y - X b||^2 + lam * (alpha * ||b||_1 + (1 - alpha) / 2 * ||b||^2)

by cyclic coordinate descent on the Gram matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LinearModel:
    coef: np.ndarray            # raw-space slopes
    intercept: float            # raw-space intercept
    coef_std: np.ndarray        # slopes on standardized columns
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    config: dict = field(default_factory=dict)
    converged: bool = True
    n_iter: int = 0
    objective: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def predict_standardized(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale
        return Z @ self.coef_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(), "intercept": self.intercept,
            "coef_std": self.coef_std.tolist(), "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(), "y_mean": self.y_mean,
            "config": self.config, "converged": self.converged, "n_iter": self.n_iter,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            coef=np.array(d["coef"], dtype=float), intercept=float(d["intercept"]),
            coef_std=np.array(d["coef_std"], dtype=float), x_mean=np.array(d["x_mean"], dtype=float),
            x_scale=np.array(d["x_scale"], dtype=float), y_mean=float(d["y_mean"]),
            config=d.get("config", {}), converged=d.get("converged", True),
            n_iter=d.get("n_iter", 0), flags=list(d.get("flags", [])),
        )


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def standardize(X):
    """Column means and population stds; constant columns get scale 1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale == 0
    scale = np.where(constant, 1.0, scale)
    return (X - mean) / scale, mean, scale, constant


def _finish(beta_std, mean, scale, y_mean, **kw) -> LinearModel:
    coef = beta_std / scale
    intercept = float(y_mean - coef @ mean)
    return LinearModel(coef=coef, intercept=intercept, coef_std=beta_std, x_mean=mean,
                       x_scale=scale, y_mean=float(y_mean), **kw)


def lambda_max(X, y, alpha: float = 1.0) -> float:
    """Smallest penalty at which every elastic-net coefficient is zero."""
    Z, _, _, _ = standardize(X)
    y = np.asarray(y, dtype=float)
    n = y.size
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / n / max(alpha, 1e-300))


def _enet_objective(beta, G, c, yy, lam, alpha):
    fit = 0.5 * (yy - 2.0 * beta @ c + beta @ G @ beta)
    pen = lam * (alpha * np.abs(beta).sum() + 0.5 * (1.0 - alpha) * beta @ beta)
    return float(fit + pen)


def fit_elastic_net(X, y, lam: float, alpha: float = 1.0, tol: float = 1e-7,
                    max_iter: int = 10_000) -> LinearModel:
    """Cyclic coordinate descent. ``alpha=1`` is the lasso.

    Non-convergence within ``max_iter`` full cycles is reported through
    ``converged=False`` rather than raised.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    y = np.asarray(y, dtype=float)
    Z, mean, scale, constant = standardize(X)
    n, d = Z.shape
    if y.shape != (n,):
        raise ValueError("y must have one target per row")
    y_mean = y.mean()
    yc = y - y_mean
    G = Z.T @ Z / n
    c = Z.T @ yc / n
    yy = float(yc @ yc / n)
    l1 = lam * alpha
    denom = 1.0 + lam * (1.0 - alpha)
    active = np.flatnonzero(~constant)
    beta = np.zeros(d)
    history = [_enet_objective(beta, G, c, yy, lam, alpha)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_delta = 0.0
        for j in active:
            rho = c[j] - G[j] @ beta + G[j, j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / denom
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        history.append(_enet_objective(beta, G, c, yy, lam, alpha))
        if max_delta < tol:
            converged = True
            break
    return _finish(beta, mean, scale, y_mean,
                   config={"family": "elastic_net", "lam": lam, "alpha": alpha, "tol": tol,
                           "max_iter": max_iter},
                   converged=converged, n_iter=it, objective=history)


def fit_ridge(X, y, lam: float, standardize_columns: bool = False) -> LinearModel:
    """Closed-form ridge with an unpenalized intercept.

    Solves ``(Xc'Xc/n + lam I) b = Xc'yc/n`` on centred data; with
    ``standardize_columns`` the columns are also scaled to unit variance.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if standardize_columns:
        Z, mean, scale, _ = standardize(X)
    else:
        mean = X.mean(axis=0)
        scale = np.ones(d)
        Z = X - mean
    y_mean = y.mean()
    A = Z.T @ Z / n + lam * np.eye(d)
    b = Z.T @ (y - y_mean) / n
    flags = []
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(A, b, rcond=None)[0]
        flags.append("singular system solved by least squares")
    return _finish(beta, mean, scale, y_mean, config={"family": "ridge", "lam": lam}, flags=flags)


def huber_weight(r, delta: float):
    """IRLS weight: 1 inside the band, delta/|r| outside."""
    r = np.abs(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore"):
        return np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))


def _mad_scale(r) -> float:
    med = np.median(r)
    return float(np.median(np.abs(r - med)) / 0.6744897501960817)


def _weighted_lstsq(A, y, w, flags):
    Aw = A * w[:, None]
    M = A.T @ Aw
    rhs = Aw.T @ y
    try:
        if np.linalg.cond(M) > 1e14:
            raise np.linalg.LinAlgError
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        if "ridge jitter" not in flags:
            flags.append("ridge jitter")
        return np.linalg.solve(M + 1e-10 * np.eye(M.shape[0]), rhs)


def fit_huber(X, y, delta: float = 1.35, tol: float = 1e-7, max_iter: int = 1000,
              scale: float | None = None) -> LinearModel:
    """Huber regression by iteratively reweighted least squares.

    Residuals are compared with ``delta`` after division by a fixed scale:
    the MAD of the ordinary least-squares residuals unless ``scale`` is
    given. The default delta of 1.35 is the usual 95%-efficiency choice.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    y = np.asarray(y, dtype=float)
    Z, mean, xscale, constant = standardize(X)
    n = Z.shape[0]
    keep = np.flatnonzero(~constant)
    A = np.column_stack([np.ones(n), Z[:, keep]])
    flags: list[str] = []
    theta = _weighted_lstsq(A, y, np.ones(n), flags)
    if scale is None:
        scale = _mad_scale(y - A @ theta)
        if scale <= 0:
            scale = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = huber_weight((y - A @ theta) / scale, delta)
        new = _weighted_lstsq(A, y, w, flags)
        step = float(np.max(np.abs(new - theta)))
        theta = new
        if step < tol:
            converged = True
            break
    beta = np.zeros(Z.shape[1])
    beta[keep] = theta[1:]
    # intercept in standardized space is theta[0]
    model = _finish(beta, mean, xscale, theta[0],
                    config={"family": "huber", "delta": delta, "scale": scale, "tol": tol,
                            "max_iter": max_iter},
                    converged=converged, n_iter=it, flags=flags)
    return model


def kkt_check(model: LinearModel, X, y, lam: float, alpha: float = 1.0) -> float:
    """Largest violation of the elastic-net stationarity conditions.

    With ``alpha=1`` this is the lasso certificate: ``|x_j'r/n - lam sign(b_j)|``
    on the support and ``max(|x_j'r/n| - lam, 0)`` off it.
    """
    y = np.asarray(y, dtype=float)
    Z = (np.asarray(X, dtype=float) - model.x_mean) / model.x_scale
    n = y.size
    r = (y - model.y_mean) - Z @ model.coef_std
    g = Z.T @ r / n - lam * (1.0 - alpha) * model.coef_std
    l1 = lam * alpha
    b = model.coef_std
    viol = np.where(b != 0, np.abs(g - l1 * np.sign(b)), np.maximum(np.abs(g) - l1, 0.0))
    return float(viol.max()) if viol.size else 0.0
