"""Versioned JSON save/load for trained models.

Floats are written with Python's shortest round-trip repr, so a reloaded
model reproduces predictions bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .base import ModelError, TrainedModel
from .bayes import GaussianNBModel
from .ensemble import BaggingModel, StackingModel, VotingModel
from .linear import LogisticModel
from .neighbors import KNNModel
from .svm import SVCModel
from .tree import ForestModel, TreeModel

FORMAT = "rfslope-model"
VERSION = 1

MODEL_CLASSES = {
    cls.kind: cls
    for cls in (LogisticModel, KNNModel, TreeModel, SVCModel, ForestModel, GaussianNBModel, StackingModel, BaggingModel, VotingModel)
}


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def model_to_doc(model: TrainedModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "n_features": model.n_features,
        "hp": model.hp,
        "params": model.params_dict(),
    }


def model_from_doc(doc: dict) -> TrainedModel:
    if doc.get("format") != FORMAT:
        raise ModelError("not a saved model document")
    if doc.get("version") != VERSION:
        raise ModelError(f"unsupported model document version {doc.get('version')!r}")
    try:
        cls = MODEL_CLASSES[doc["kind"]]
    except KeyError:
        raise ModelError(f"unknown model kind {doc.get('kind')!r}") from None
    return cls.from_params(doc["hp"], doc["n_features"], doc["params"])


def dumps(model: TrainedModel) -> str:
    return json.dumps(model_to_doc(model), default=_plain, sort_keys=True, separators=(",", ":"), allow_nan=False)


def loads(text: str) -> TrainedModel:
    return model_from_doc(json.loads(text))


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load_model(path) -> TrainedModel:
    return loads(Path(path).read_text(encoding="utf-8"))
