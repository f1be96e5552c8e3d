"""Stacking, bagging and hard-voting ensembles."""
from __future__ import annotations

import numpy as np

from .base import (
    DegenerateModelError,
    ModelError,
    TrainedModel,
    check_xy,
    merge_hp,
    rng_for,
    seed_sequence,
)
from .bayes import train_gnb
from .linear import LogisticModel, train_lr
from .neighbors import train_knn
from .svm import train_svc
from .tree import train_dt, train_rf

STACK_BASES = ("LR", "KNN", "DT", "SVC", "RF", "GNB")
VOTE_BASES = ("LR", "KNN", "DT", "RF", "SVC", "GNB")

STACK_DEFAULTS = {
    "n_folds": 10,
    "meta_folds": 5,
    "meta_C_grid": [0.01, 0.1, 1.0, 10.0, 100.0],
    "seed": 0,
    "base_hp": {},
}
BAG_DEFAULTS = {"n_estimators": 10, "bootstrap": True, "base_hp": {"n_trees": 50}, "seed": 0}
VOTE_DEFAULTS = {"base_hp": {}}

_BASE_TRAINERS = {
    "LR": train_lr,
    "KNN": train_knn,
    "DT": train_dt,
    "SVC": train_svc,
    "RF": train_rf,
    "GNB": train_gnb,
}


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold id per row: each class shuffled and dealt round-robin across folds."""
    rng = rng_for(seed, 1)
    folds = np.empty(y.shape[0], dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.nonzero(y == c)[0]
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return folds


def _check_folds(y: np.ndarray, k: int, what: str) -> None:
    if k < 2:
        raise ModelError(f"{what}: need at least 2 folds")
    if k > y.shape[0]:
        raise ModelError(f"{what}: {k} folds exceed {y.shape[0]} rows")
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise DegenerateModelError(f"{what}: each class needs at least 2 rows for out-of-fold training (counts {counts.tolist()})")


def _base(kind: str, X, y, base_hp: dict) -> TrainedModel:
    return _BASE_TRAINERS[kind](X, y, base_hp.get(kind))


def stacking_meta_features(X, y, hp: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold class-1 scores of the six base models, plus the fold ids.

    Row i comes from base models fitted without the fold holding row i.
    """
    hp = merge_hp(STACK_DEFAULTS, hp)
    X, y = check_xy(X, y)
    k = int(hp["n_folds"])
    _check_folds(y, k, "stacking")
    folds = stratified_folds(y, k, hp["seed"])
    meta = np.empty((X.shape[0], len(STACK_BASES)))
    for f in range(k):
        test = folds == f
        train = ~test
        for col, kind in enumerate(STACK_BASES):
            model = _base(kind, X[train], y[train], hp["base_hp"])
            meta[test, col] = model.predict_score(X[test])
    return meta, folds


def _select_meta_c(meta: np.ndarray, y: np.ndarray, grid, k: int, seed: int) -> float:
    folds = stratified_folds(y, k, seed + 1)
    best_c, best_acc = float(grid[0]), -1.0
    for c in grid:
        hits = 0
        for f in range(k):
            test = folds == f
            model = train_lr(meta[~test], y[~test], {"C": float(c)})
            hits += int(np.sum(model.predict(meta[test]) == y[test]))
        acc = hits / y.shape[0]
        if acc > best_acc:
            best_acc, best_c = acc, float(c)
    return best_c


class StackingModel(TrainedModel):
    kind = "STACK"

    def __init__(self, hp, n_features, bases: list[TrainedModel], meta: LogisticModel):
        super().__init__(hp, n_features)
        self.bases = bases
        self.meta = meta

    def meta_features(self, rows) -> np.ndarray:
        return np.column_stack([m.predict_score(rows) for m in self.bases])

    def _score(self, rows):
        return self.meta.predict_score(self.meta_features(rows))

    def params_dict(self):
        from .persistence import model_to_doc

        return {"bases": [model_to_doc(m) for m in self.bases], "meta": model_to_doc(self.meta)}

    @classmethod
    def from_params(cls, hp, n_features, params):
        from .persistence import model_from_doc

        return cls(hp, n_features, [model_from_doc(d) for d in params["bases"]], model_from_doc(params["meta"]))


def train_stacking(X, y, hp: dict | None = None) -> StackingModel:
    hp = merge_hp(STACK_DEFAULTS, hp)
    X, y = check_xy(X, y)
    if X.shape[0] < 10:
        raise ModelError("stacking needs at least 10 training rows")
    meta, _ = stacking_meta_features(X, y, hp)
    mk = int(hp["meta_folds"])
    _check_folds(y, mk, "stacking meta model")
    c = _select_meta_c(meta, y, hp["meta_C_grid"], mk, int(hp["seed"]))
    meta_model = train_lr(meta, y, {"C": c})
    bases = [_base(kind, X, y, hp["base_hp"]) for kind in STACK_BASES]
    return StackingModel(hp, X.shape[1], bases, meta_model)


def bootstrap_indices(n: int, seed: int, index: int) -> np.ndarray:
    """Sample of size n drawn with replacement (sorted)."""
    return np.sort(rng_for(seed, 7, index).integers(0, n, size=n))


class BaggingModel(TrainedModel):
    kind = "BAG"

    def __init__(self, hp, n_features, estimators: list[TrainedModel]):
        super().__init__(hp, n_features)
        self.estimators = estimators

    def _score(self, rows):
        # fraction of estimators voting failed; 50/50 stays stable
        votes = np.stack([m.predict(rows) for m in self.estimators])
        return votes.sum(axis=0) / len(self.estimators)

    def params_dict(self):
        from .persistence import model_to_doc

        return {"estimators": [model_to_doc(m) for m in self.estimators]}

    @classmethod
    def from_params(cls, hp, n_features, params):
        from .persistence import model_from_doc

        return cls(hp, n_features, [model_from_doc(d) for d in params["estimators"]])


def train_bagging(X, y, hp: dict | None = None) -> BaggingModel:
    hp = merge_hp(BAG_DEFAULTS, hp)
    X, y = check_xy(X, y)
    n_est = int(hp["n_estimators"])
    if n_est < 1:
        raise ModelError("n_estimators must be at least 1")
    n = X.shape[0]
    estimators = []
    for e in range(n_est):
        rows = bootstrap_indices(n, int(hp["seed"]), e) if hp["bootstrap"] else np.arange(n)
        base_hp = dict(hp["base_hp"])
        base_hp.setdefault("seed", int(seed_sequence(int(hp["seed"]), 11, e).generate_state(1, np.uint32)[0]))
        estimators.append(train_rf(X[rows], y[rows], base_hp))
    return BaggingModel(hp, X.shape[1], estimators)


class VotingModel(TrainedModel):
    kind = "VOTE"

    def __init__(self, hp, n_features, bases: list[TrainedModel]):
        super().__init__(hp, n_features)
        self.bases = bases

    def base_predictions(self, rows) -> np.ndarray:
        return np.stack([m.predict(rows) for m in self.bases])

    def predict(self, rows):
        rows = self._check_rows(rows)
        if rows.shape[0] == 0:
            return np.empty(0, dtype=np.uint8)
        return hard_vote(self.base_predictions(rows))

    def _score(self, rows):
        # ROC only: mean of probability-like base scores
        return np.mean([m.probability(rows) for m in self.bases], axis=0)

    def params_dict(self):
        from .persistence import model_to_doc

        return {"bases": [model_to_doc(m) for m in self.bases]}

    @classmethod
    def from_params(cls, hp, n_features, params):
        from .persistence import model_from_doc

        return cls(hp, n_features, [model_from_doc(d) for d in params["bases"]])


def hard_vote(predictions) -> np.ndarray:
    """Column-wise majority of 0/1 predictions; ties go to 0 (stable)."""
    p = np.asarray(predictions)
    return (2 * p.sum(axis=0) > p.shape[0]).astype(np.uint8)


def train_voting(X, y, hp: dict | None = None) -> VotingModel:
    hp = merge_hp(VOTE_DEFAULTS, hp)
    X, y = check_xy(X, y)
    bases = [_base(kind, X, y, hp["base_hp"]) for kind in VOTE_BASES]
    return VotingModel(hp, X.shape[1], bases)
