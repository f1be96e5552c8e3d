"""Shared pieces of the surrogate classifiers: standardisation, base class, errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("LR", "KNN", "DT", "SVC", "RF", "GNB", "STACK", "BAG", "VOTE")


class ModelError(ValueError):
    pass


class DegenerateModelError(ModelError):
    """Training data cannot support the model (e.g. a single class)."""


class ConvergenceError(ModelError):
    def __init__(self, message: str, violation: float):
        super().__init__(message)
        self.violation = violation


class WidthMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def fit_standardizer(train_rows) -> Standardizer:
    """Per-column mean and population standard deviation.

    Zero-variance columns get mean 0 and scale 1, i.e. pass through unchanged.
    """
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ModelError("standardizer needs at least one training row")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    const = ~(std > 0)
    mean = np.where(const, 0.0, mean)
    std = np.where(const, 1.0, std)
    return Standardizer(mean, std)


def check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ModelError("X must be 2-D")
    if y.shape != (X.shape[0],):
        raise ModelError("y must have one label per row")
    if X.shape[0] == 0:
        raise DegenerateModelError("empty training set")
    if not np.all((y == 0) | (y == 1)):
        raise ModelError("labels must be 0 (stable) or 1 (failed)")
    return X, y.astype(np.int64)


def require_two_classes(y: np.ndarray, kind: str) -> None:
    if np.unique(y).size < 2:
        raise DegenerateModelError(f"{kind} needs both classes in the training set")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


class TrainedModel:
    """A fitted classifier; class 1 means *failed*.

    Subclasses implement ``_score`` on raw rows and the (de)serialisation of
    their learned parameters.  ``threshold`` is the score boundary: a row is
    labelled failed only when its score is strictly above it.
    """

    kind: str = ""
    threshold: float = 0.5

    def __init__(self, hp: dict, n_features: int):
        self.hp = dict(hp)
        self.n_features = int(n_features)

    def _check_rows(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, self.n_features)
        if rows.ndim != 2 or rows.shape[1] != self.n_features:
            raise WidthMismatchError(
                f"{self.kind} was trained on {self.n_features} features, got rows of shape {rows.shape}"
            )
        return rows

    def predict_score(self, rows) -> np.ndarray:
        rows = self._check_rows(rows)
        if rows.shape[0] == 0:
            return np.empty(0)
        return self._score(rows)

    def predict(self, rows) -> np.ndarray:
        scores = self.predict_score(rows)
        return (scores > self.threshold).astype(np.uint8)

    def probability(self, rows) -> np.ndarray:
        """Score mapped into [0, 1] with the decision boundary at 0.5."""
        return self.predict_score(rows)

    def _score(self, rows: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def params_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    @classmethod
    def from_params(cls, hp: dict, n_features: int, params: dict) -> "TrainedModel":  # pragma: no cover
        raise NotImplementedError


def merge_hp(defaults: dict, hp: dict | None) -> dict:
    merged = dict(defaults)
    if hp:
        unknown = set(hp) - set(defaults)
        if unknown:
            raise ModelError(f"unknown hyperparameters: {sorted(unknown)}")
        merged.update(hp)
    return merged
