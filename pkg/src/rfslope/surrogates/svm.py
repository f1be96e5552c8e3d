"""Soft-margin support vector classifier solved in the dual by SMO.

Working pairs are chosen as the maximal KKT-violating pair; iteration stops
when the violation gap drops to ``tol``.
"""
from __future__ import annotations

import numpy as np

from .. import _accel
from .._accel import njit
from .base import (
    ConvergenceError,
    ModelError,
    Standardizer,
    TrainedModel,
    check_xy,
    fit_standardizer,
    merge_hp,
    require_two_classes,
    sigmoid,
)

SVC_DEFAULTS = {"C": 1.0, "kernel": "rbf", "gamma": "scale", "degree": 3, "coef0": 0.0, "tol": 1e-3, "max_iter": 200000}
_TAU = 1e-12


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: float, degree: int = 3, coef0: float = 0.0) -> np.ndarray:
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    if kernel == "poly":
        return (gamma * (a @ b.T) + coef0) ** degree
    raise ModelError(f"unknown kernel {kernel!r}")


@njit
def _smo_nb(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    while it < max_iter:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap <= tol:
            break
        qij = y[i] * y[j] * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * dai + y[j] * K[t, j] * daj)
        it += 1
    return alpha, grad, it, gap


def _smo_np(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    pos = y > 0
    while it < max_iter:
        v = -y * grad
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        if not up.any() or not low.any():
            break
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        gap = vu[i] - vl[j]
        if gap <= tol:
            break
        qij = y[i] * y[j] * K[i, j]
        ai_old, aj_old = alpha[i], alpha[j]
        ai, aj = ai_old, aj_old
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            quad = quad if quad > 0 else _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            quad = quad if quad > 0 else _TAU
            delta = (grad[i] - grad[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * K[:, i] * (ai - ai_old) + y[j] * K[:, j] * (aj - aj_old))
        it += 1
    return alpha, grad, it, gap


def solve_dual(K: np.ndarray, y_pm: np.ndarray, C: float, tol: float, max_iter: int):
    """SMO on min 0.5 a'Qa - sum(a), 0 <= a <= C, y'a = 0, Q = yy' * K.

    Returns (alpha, gradient, iterations, final violation gap).
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y_pm = np.ascontiguousarray(y_pm, dtype=np.float64)
    if _accel.use_numba():
        a, g, it, gap = _smo_nb(K, y_pm, float(C), float(tol), int(max_iter))
        return a, g, int(it), float(gap)
    return _smo_np(K, y_pm, float(C), float(tol), int(max_iter))


def kkt_gap(alpha, grad, y_pm, C) -> float:
    v = -y_pm * grad
    pos = y_pm > 0
    up = (pos & (alpha < C)) | (~pos & (alpha > 0))
    low = (pos & (alpha > 0)) | (~pos & (alpha < C))
    if not up.any() or not low.any():
        return 0.0
    return float(v[up].max() - v[low].min())


def intercept(alpha, grad, y_pm, C) -> float:
    """b from free vectors (mean of -y*grad), else the midpoint of the feasible range."""
    yg = y_pm * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return -float(np.mean(yg[free]))
    at_up = alpha >= C
    ub_mask = (at_up & (y_pm < 0)) | (~at_up & (y_pm > 0))
    lb_mask = (at_up & (y_pm > 0)) | (~at_up & (y_pm < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return -float(rho)


class SVCModel(TrainedModel):
    kind = "SVC"
    threshold = 0.0

    def __init__(self, hp, n_features, scaler: Standardizer, support: np.ndarray, coef: np.ndarray, b: float, gamma: float, meta: dict | None = None):
        super().__init__(hp, n_features)
        self.scaler = scaler
        self.support = np.asarray(support, dtype=np.float64).reshape(-1, n_features)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.b = float(b)
        self.gamma = float(gamma)
        self.meta = meta or {}

    def _score(self, rows):
        k = kernel_matrix(self.scaler.apply(rows), self.support, self.hp["kernel"], self.gamma, self.hp["degree"], self.hp["coef0"])
        return k @ self.coef + self.b

    def probability(self, rows):
        return sigmoid(self.predict_score(rows))

    def params_dict(self):
        return {
            "scaler": self.scaler.to_dict(),
            "support": self.support.tolist(),
            "coef": self.coef.tolist(),
            "b": self.b,
            "gamma": self.gamma,
            "meta": self.meta,
        }

    @classmethod
    def from_params(cls, hp, n_features, params):
        return cls(hp, n_features, Standardizer.from_dict(params["scaler"]), params["support"], params["coef"], params["b"], params["gamma"], params.get("meta"))


def train_svc(X, y, hp: dict | None = None) -> SVCModel:
    hp = merge_hp(SVC_DEFAULTS, hp)
    X, y = check_xy(X, y)
    require_two_classes(y, "SVC")
    scaler = fit_standardizer(X)
    xs = scaler.apply(X)
    if hp["gamma"] == "scale":
        mean_var = float(np.mean(xs.var(axis=0)))
        gamma = 1.0 / (X.shape[1] * mean_var) if mean_var > 0 else 1.0
    else:
        gamma = float(hp["gamma"])
    y_pm = 2.0 * y - 1.0
    K = kernel_matrix(xs, xs, hp["kernel"], gamma, hp["degree"], hp["coef0"])
    C = float(hp["C"])
    alpha, grad, iters, gap = solve_dual(K, y_pm, C, float(hp["tol"]), int(hp["max_iter"]))
    if gap > hp["tol"]:
        raise ConvergenceError(f"SMO stopped after {iters} iterations with KKT violation {gap:.3e}", gap)
    b = intercept(alpha, grad, y_pm, C)
    sv = alpha > 0
    meta = {"iterations": iters, "kkt_gap": gap, "n_support": int(sv.sum())}
    return SVCModel(hp, X.shape[1], scaler, xs[sv], alpha[sv] * y_pm[sv], b, gamma, meta)
