"""Binary classifiers used as stand-ins for the stability oracle.

Every kind is trained with ``train(kind, X, y, hp)`` and exposes
``predict`` (0 stable / 1 failed) and ``predict_score`` (monotone in the
confidence of failure).
"""
from __future__ import annotations

from .base import (
    KINDS,
    ConvergenceError,
    DegenerateModelError,
    ModelError,
    Standardizer,
    TrainedModel,
    WidthMismatchError,
    fit_standardizer,
)
from .bayes import GNB_DEFAULTS, train_gnb
from .ensemble import (
    BAG_DEFAULTS,
    STACK_DEFAULTS,
    VOTE_DEFAULTS,
    hard_vote,
    stacking_meta_features,
    train_bagging,
    train_stacking,
    train_voting,
)
from .linear import LR_DEFAULTS, train_lr
from .neighbors import KNN_DEFAULTS, train_knn
from .persistence import dumps, load_model, loads, save_model
from .svm import SVC_DEFAULTS, train_svc
from .tree import DT_DEFAULTS, RF_DEFAULTS, train_dt, train_rf

TRAINERS = {
    "LR": train_lr,
    "KNN": train_knn,
    "DT": train_dt,
    "SVC": train_svc,
    "RF": train_rf,
    "GNB": train_gnb,
    "STACK": train_stacking,
    "BAG": train_bagging,
    "VOTE": train_voting,
}

DEFAULTS = {
    "LR": LR_DEFAULTS,
    "KNN": KNN_DEFAULTS,
    "DT": DT_DEFAULTS,
    "SVC": SVC_DEFAULTS,
    "RF": RF_DEFAULTS,
    "GNB": GNB_DEFAULTS,
    "STACK": STACK_DEFAULTS,
    "BAG": BAG_DEFAULTS,
    "VOTE": VOTE_DEFAULTS,
}


def train(kind: str, X, y, hp: dict | None = None) -> TrainedModel:
    try:
        trainer = TRAINERS[kind]
    except KeyError:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {', '.join(KINDS)}") from None
    return trainer(X, y, hp)


def predict(model: TrainedModel, rows):
    return model.predict(rows)


def predict_score(model: TrainedModel, rows):
    return model.predict_score(rows)


__all__ = [
    "KINDS", "TRAINERS", "DEFAULTS", "train", "predict", "predict_score", "fit_standardizer",
    "Standardizer", "TrainedModel", "ModelError", "DegenerateModelError", "ConvergenceError",
    "WidthMismatchError", "hard_vote", "stacking_meta_features", "dumps", "loads", "save_model", "load_model",
]
