"""Gaussian naive Bayes."""
from __future__ import annotations

import numpy as np

from .base import Standardizer, TrainedModel, check_xy, fit_standardizer, merge_hp, require_two_classes

GNB_DEFAULTS = {"var_smoothing": 1e-9}


class GaussianNBModel(TrainedModel):
    kind = "GNB"

    def __init__(self, hp, n_features, scaler: Standardizer, means: np.ndarray, variances: np.ndarray, priors: np.ndarray):
        super().__init__(hp, n_features)
        self.scaler = scaler
        self.means = np.asarray(means, dtype=np.float64).reshape(2, n_features)
        self.variances = np.asarray(variances, dtype=np.float64).reshape(2, n_features)
        self.priors = np.asarray(priors, dtype=np.float64)

    def log_joint(self, rows) -> np.ndarray:
        """log P(class) + sum_f log N(x_f; mean, var), shape (n, 2)."""
        xs = self.scaler.apply(rows)
        out = np.empty((xs.shape[0], 2))
        for c in range(2):
            var = self.variances[c]
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * var)) - 0.5 * np.sum((xs - self.means[c]) ** 2 / var, axis=1)
            out[:, c] = np.log(self.priors[c]) + ll
        return out

    def posterior(self, rows) -> np.ndarray:
        lj = self.log_joint(rows)
        norm = np.logaddexp(lj[:, 0], lj[:, 1])
        return np.exp(lj - norm[:, None])

    def _score(self, rows):
        return self.posterior(rows)[:, 1]

    def params_dict(self):
        return {
            "scaler": self.scaler.to_dict(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "priors": self.priors.tolist(),
        }

    @classmethod
    def from_params(cls, hp, n_features, params):
        return cls(hp, n_features, Standardizer.from_dict(params["scaler"]), params["means"], params["variances"], params["priors"])


def train_gnb(X, y, hp: dict | None = None) -> GaussianNBModel:
    hp = merge_hp(GNB_DEFAULTS, hp)
    X, y = check_xy(X, y)
    require_two_classes(y, "GNB")
    scaler = fit_standardizer(X)
    xs = scaler.apply(X)
    floor = float(hp["var_smoothing"]) * float(np.mean(xs.var(axis=0)))
    if not floor > 0:
        floor = float(hp["var_smoothing"])
    means = np.stack([xs[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([xs[y == c].var(axis=0) for c in (0, 1)]) + floor
    priors = np.array([np.mean(y == 0), np.mean(y == 1)])
    return GaussianNBModel(hp, X.shape[1], scaler, means, variances, priors)
