"""L2-regularised logistic regression trained by full-batch gradient descent."""
from __future__ import annotations

import numpy as np

from .base import (
    Standardizer,
    TrainedModel,
    check_xy,
    fit_standardizer,
    merge_hp,
    require_two_classes,
    sigmoid,
)

LR_DEFAULTS = {"C": 1.0, "tol": 1e-6, "max_epochs": 50000}


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def lr_objective(w: np.ndarray, c: float, X: np.ndarray, y01: np.ndarray, C: float) -> float:
    """0.5 w.w + C * sum log(1 + exp(-s (x.w + c))), s = +-1."""
    s = 2.0 * y01 - 1.0
    z = X @ w + c
    return 0.5 * float(w @ w) + C * float(np.sum(_log1pexp(-s * z)))


def lr_gradient(w: np.ndarray, c: float, X: np.ndarray, y01: np.ndarray, C: float) -> tuple[np.ndarray, float]:
    s = 2.0 * y01 - 1.0
    z = X @ w + c
    # d/dz log(1 + exp(-s z)) = -s * sigmoid(-s z)
    r = -s * sigmoid(-s * z)
    return w + C * (X.T @ r), C * float(np.sum(r))


def fit_logistic(X: np.ndarray, y01: np.ndarray, C: float, tol: float, max_epochs: int) -> tuple[np.ndarray, float, int]:
    """Nesterov-accelerated full-batch descent from w = 0, c = 0.

    Step 1/L with L the gradient Lipschitz bound; momentum restarts whenever
    the objective increases.  Stops at ||grad||_inf <= tol.
    """
    n, d = X.shape
    xa = np.hstack([X, np.ones((n, 1))])
    sv = np.linalg.norm(xa, 2) if n else 0.0
    lip = 1.0 + C * sv * sv / 4.0
    step = 1.0 / lip
    theta = np.zeros(d + 1)
    prev = theta.copy()
    t = 1.0
    f_prev = np.inf
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        look = theta + ((t - 1.0) / t_next) * (theta - prev)
        gw, gc = lr_gradient(look[:d], look[d], X, y01, C)
        g = np.append(gw, gc)
        prev = theta
        theta = look - step * g
        t = t_next
        f = lr_objective(theta[:d], theta[d], X, y01, C)
        if f > f_prev:
            # restart momentum from the better iterate
            theta = prev.copy()
            t = 1.0
            f = f_prev
        f_prev = f
        gw, gc = lr_gradient(theta[:d], theta[d], X, y01, C)
        if max(np.max(np.abs(gw)) if d else 0.0, abs(gc)) <= tol:
            break
    return theta[:d].copy(), float(theta[d]), epoch


class LogisticModel(TrainedModel):
    kind = "LR"

    def __init__(self, hp, n_features, scaler: Standardizer, w: np.ndarray, c: float, epochs: int = 0):
        super().__init__(hp, n_features)
        self.scaler = scaler
        self.w = np.asarray(w, dtype=np.float64)
        self.c = float(c)
        self.epochs = epochs

    def _score(self, rows):
        return sigmoid(self.scaler.apply(rows) @ self.w + self.c)

    def params_dict(self):
        return {"scaler": self.scaler.to_dict(), "w": self.w.tolist(), "c": self.c, "epochs": self.epochs}

    @classmethod
    def from_params(cls, hp, n_features, params):
        return cls(hp, n_features, Standardizer.from_dict(params["scaler"]), params["w"], params["c"], params["epochs"])


def train_lr(X, y, hp: dict | None = None) -> LogisticModel:
    hp = merge_hp(LR_DEFAULTS, hp)
    X, y = check_xy(X, y)
    require_two_classes(y, "LR")
    scaler = fit_standardizer(X)
    w, c, epochs = fit_logistic(scaler.apply(X), y.astype(np.float64), float(hp["C"]), float(hp["tol"]), int(hp["max_epochs"]))
    return LogisticModel(hp, X.shape[1], scaler, w, c, epochs)
