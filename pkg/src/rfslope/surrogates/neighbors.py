"""k-nearest-neighbour majority vote on standardised features."""
from __future__ import annotations

import numpy as np

from .. import _accel
from .._accel import njit
from .base import ModelError, Standardizer, TrainedModel, check_xy, fit_standardizer, merge_hp

KNN_DEFAULTS = {"k": 5, "metric": "euclidean", "p": 2.0}
_METRICS = ("euclidean", "manhattan", "minkowski")


@njit
def _distances_nb(q, x, metric, p):
    nq, d = q.shape
    nx = x.shape[0]
    out = np.empty((nq, nx))
    for i in range(nq):
        for j in range(nx):
            s = 0.0
            if metric == 0:
                for f in range(d):
                    t = q[i, f] - x[j, f]
                    s += t * t
                out[i, j] = np.sqrt(s)
            elif metric == 1:
                for f in range(d):
                    s += abs(q[i, f] - x[j, f])
                out[i, j] = s
            else:
                for f in range(d):
                    s += abs(q[i, f] - x[j, f]) ** p
                out[i, j] = s ** (1.0 / p)
    return out


def _distances_np(q, x, metric, p, chunk=32):
    out = np.empty((q.shape[0], x.shape[0]))
    for s in range(0, q.shape[0], chunk):
        diff = q[s : s + chunk, None, :] - x[None, :, :]
        if metric == 0:
            out[s : s + chunk] = np.sqrt(np.sum(diff * diff, axis=2))
        elif metric == 1:
            out[s : s + chunk] = np.sum(np.abs(diff), axis=2)
        else:
            out[s : s + chunk] = np.sum(np.abs(diff) ** p, axis=2) ** (1.0 / p)
    return out


def pairwise_distances(q, x, metric: str = "euclidean", p: float = 2.0) -> np.ndarray:
    code = _METRICS.index(metric)
    q = np.ascontiguousarray(q, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _accel.use_numba():
        return _distances_nb(q, x, code, float(p))
    return _distances_np(q, x, code, float(p))


class KNNModel(TrainedModel):
    kind = "KNN"

    def __init__(self, hp, n_features, scaler: Standardizer, exemplars: np.ndarray, labels: np.ndarray):
        super().__init__(hp, n_features)
        self.scaler = scaler
        self.exemplars = np.asarray(exemplars, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)

    def neighbours(self, rows) -> np.ndarray:
        """Indices of the k nearest exemplars; equal distances favour the lower index."""
        dist = pairwise_distances(self.scaler.apply(rows), self.exemplars, self.hp["metric"], self.hp["p"])
        order = np.argsort(dist, axis=1, kind="stable")
        return order[:, : int(self.hp["k"])]

    def _score(self, rows):
        nb = self.neighbours(rows)
        return self.labels[nb].mean(axis=1)

    def params_dict(self):
        return {"scaler": self.scaler.to_dict(), "exemplars": self.exemplars.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_params(cls, hp, n_features, params):
        ex = np.asarray(params["exemplars"], dtype=np.float64).reshape(-1, n_features)
        return cls(hp, n_features, Standardizer.from_dict(params["scaler"]), ex, params["labels"])


def train_knn(X, y, hp: dict | None = None) -> KNNModel:
    hp = merge_hp(KNN_DEFAULTS, hp)
    X, y = check_xy(X, y)
    if hp["metric"] not in _METRICS:
        raise ModelError(f"unknown metric {hp['metric']!r}")
    k = int(hp["k"])
    if not 1 <= k <= X.shape[0]:
        raise ModelError(f"k={k} must lie in [1, {X.shape[0]}]")
    scaler = fit_standardizer(X)
    return KNNModel(hp, X.shape[1], scaler, scaler.apply(X), y)
