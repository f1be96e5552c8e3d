"""CART-style Gini trees and random forests."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .. import _accel
from .._accel import njit
from .base import ModelError, TrainedModel, check_xy, merge_hp, rng_for

DT_DEFAULTS = {
    "max_depth": 12,
    "min_leaf": 2,
    "split_zero_gain": False,
    "prune": False,
    "prune_fraction": 0.2,
    "seed": 0,
}
RF_DEFAULTS = {
    "n_trees": 100,
    "max_features": "sqrt",
    "bootstrap": True,
    "max_depth": None,
    "min_leaf": 1,
    "split_zero_gain": False,
    "seed": 0,
}

_GAIN_EPS = 1e-12


@njit
def _best_split_nb(X, y, idx, feats, min_leaf):
    n = idx.shape[0]
    n1 = 0
    for i in range(n):
        n1 += y[idx[i]]
    n0 = n - n1
    parent = n - (n1 * n1 + n0 * n0) / n
    best_gain = -np.inf
    best_f = -1
    best_t = 0.0
    vals = np.empty(n)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        c1 = 0
        for pos in range(n - 1):
            c1 += y[idx[order[pos]]]
            nl = pos + 1
            nr = n - nl
            v = vals[order[pos]]
            vn = vals[order[pos + 1]]
            if not vn > v:
                continue
            if nl < min_leaf or nr < min_leaf:
                continue
            c0l = nl - c1
            c1r = n1 - c1
            c0r = nr - c1r
            child = (nl - (c1 * c1 + c0l * c0l) / nl) + (nr - (c1r * c1r + c0r * c0r) / nr)
            gain = (parent - child) / n
            if gain > best_gain:
                best_gain = gain
                best_f = f
                t = 0.5 * (v + vn)
                if not t < vn:
                    t = v
                best_t = t
    return best_f, best_t, best_gain


def _best_split_np(X, y, idx, feats, min_leaf):
    n = idx.shape[0]
    if n < 2 or feats.size == 0:
        return -1, 0.0, -np.inf
    yn = y[idx]
    n1 = int(yn.sum())
    n0 = n - n1
    parent = n - (n1 * n1 + n0 * n0) / n
    xs = X[np.ix_(idx, feats)]
    order = np.argsort(xs, axis=0, kind="stable")
    sv = np.take_along_axis(xs, order, axis=0)
    c1 = np.cumsum(yn[order], axis=0)[:-1]
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    c0l = nl - c1
    c1r = n1 - c1
    c0r = nr - c1r
    child = (nl - (c1 * c1 + c0l * c0l) / nl) + (nr - (c1r * c1r + c0r * c0r) / nr)
    gain = (parent - child) / n
    valid = (sv[1:] > sv[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()
    k = int(np.argmax(flat))
    if not np.isfinite(flat[k]):
        return -1, 0.0, -np.inf
    fi, pos = divmod(k, n - 1)
    v, vn = sv[pos, fi], sv[pos + 1, fi]
    t = 0.5 * (v + vn)
    if not t < vn:
        t = v
    return int(feats[fi]), float(t), float(flat[k])


def best_split(X, y, idx, feats, min_leaf):
    """Best Gini split of rows ``idx`` over candidate features ``feats``.

    Candidates are midpoints between consecutive distinct values; ties go to
    the first feature in ``feats`` then the lowest threshold.  Returns
    (feature, threshold, impurity decrease), feature -1 when nothing is valid.
    """
    if _accel.use_numba():
        if idx.shape[0] < 2 or feats.shape[0] == 0:
            return -1, 0.0, -np.inf
        f, t, g = _best_split_nb(X, y, idx, feats, int(min_leaf))
        return int(f), float(t), float(g)
    return _best_split_np(X, y, idx, feats, int(min_leaf))


@njit
def _apply_nb(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _apply_np(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while np.any(active):
        rows = np.nonzero(active)[0]
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return node


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    count: np.ndarray
    count1: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.count1 / np.maximum(self.count, 1)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if _accel.use_numba():
            return _apply_nb(X, self.feature, self.threshold, self.left, self.right)
        return _apply_np(X, self.feature, self.threshold, self.left, self.right)

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "count": self.count.tolist(),
            "count1": self.count1.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["count"], dtype=np.int64),
            np.asarray(d["count1"], dtype=np.int64),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.feature, self.threshold, self.left, self.right, self.count, self.count1):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    max_depth: int | None,
    min_leaf: int,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    split_zero_gain: bool = False,
) -> Tree:
    """Depth-first greedy growth; nodes numbered in pre-order, left first.

    A node becomes a leaf when it is pure, at ``max_depth``, too small to
    split, or when no candidate split decreases impurity (unless
    ``split_zero_gain`` allows zero-decrease splits).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    d = X.shape[1]
    all_feats = np.arange(d, dtype=np.int64)
    feature, threshold, left, right, count, count1 = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        count.append(idx.size)
        count1.append(int(y[idx].sum()))
        return len(feature) - 1

    root = new_node(np.asarray(rows, dtype=np.int64))
    stack = [(root, np.asarray(rows, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n1 = count1[node]
        if n1 == 0 or n1 == idx.size:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if idx.size < 2 * min_leaf:
            continue
        if max_features is None or max_features >= d:
            feats = all_feats
        else:
            feats = np.sort(rng.choice(d, size=max_features, replace=False)).astype(np.int64)
        f, t, gain = best_split(X, y, idx, feats, min_leaf)
        if f < 0:
            continue
        if not (gain > _GAIN_EPS or (split_zero_gain and gain > -_GAIN_EPS)):
            continue
        mask = X[idx, f] <= t
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = t
        ln = new_node(li)
        rn = new_node(ri)
        left[node] = ln
        right[node] = rn
        # push right first so the left subtree is numbered first
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return _renumber(
        Tree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(count, dtype=np.int64),
            np.array(count1, dtype=np.int64),
        )
    )


def _renumber(tree: Tree) -> Tree:
    """Pre-order renumbering, dropping unreachable nodes."""
    order = []
    stack = [0]
    while stack:
        n = stack.pop()
        order.append(n)
        if tree.feature[n] >= 0:
            stack.append(int(tree.right[n]))
            stack.append(int(tree.left[n]))
    remap = {old: new for new, old in enumerate(order)}
    o = np.array(order, dtype=np.int64)
    feat = tree.feature[o].copy()
    left = np.array([remap[int(tree.left[n])] if tree.feature[n] >= 0 else -1 for n in order], dtype=np.int64)
    right = np.array([remap[int(tree.right[n])] if tree.feature[n] >= 0 else -1 for n in order], dtype=np.int64)
    thr = np.where(feat >= 0, tree.threshold[o], 0.0)
    return Tree(feat, thr, left, right, tree.count[o].copy(), tree.count1[o].copy())


def prune_reduced_error(tree: Tree, Xh: np.ndarray, yh: np.ndarray) -> Tree:
    """Collapse subtrees bottom-up while holdout errors do not increase."""
    feature = tree.feature.copy()
    n = tree.n_nodes
    leaf_label = (tree.value > 0.5).astype(np.int64)
    # holdout rows reaching each node
    reach = [[] for _ in range(n)]
    for i in range(Xh.shape[0]):
        node = 0
        reach[0].append(i)
        while feature[node] >= 0:
            node = tree.left[node] if Xh[i, feature[node]] <= tree.threshold[node] else tree.right[node]
            reach[node].append(i)
    err_leaf = np.array([np.sum(yh[r] != leaf_label[k]) if r else 0 for k, r in enumerate(reach)])

    def visit(node):
        if feature[node] < 0:
            return err_leaf[node]
        e = visit(int(tree.left[node])) + visit(int(tree.right[node]))
        if err_leaf[node] <= e:
            feature[node] = -1
            return err_leaf[node]
        return e

    visit(0)
    pruned = Tree(feature, tree.threshold.copy(), tree.left.copy(), tree.right.copy(), tree.count.copy(), tree.count1.copy())
    return _renumber(pruned)


def resolve_max_features(spec, d: int) -> int:
    if spec in (None, "all"):
        return d
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(spec, float) and 0 < spec <= 1:
        return max(1, int(spec * d))
    if isinstance(spec, int) and spec >= 1:
        return min(spec, d)
    raise ModelError(f"invalid max_features {spec!r}")


class TreeModel(TrainedModel):
    kind = "DT"

    def __init__(self, hp, n_features, tree: Tree):
        super().__init__(hp, n_features)
        self.tree = tree

    def _score(self, rows):
        return self.tree.predict_value(rows)

    def params_dict(self):
        return {"tree": self.tree.to_dict()}

    @classmethod
    def from_params(cls, hp, n_features, params):
        return cls(hp, n_features, Tree.from_dict(params["tree"]))


def train_dt(X, y, hp: dict | None = None) -> TreeModel:
    hp = merge_hp(DT_DEFAULTS, hp)
    X, y = check_xy(X, y)
    min_leaf = int(hp["min_leaf"])
    if X.shape[0] < min_leaf:
        raise ModelError(f"need at least min_leaf={min_leaf} rows")
    rows = np.arange(X.shape[0])
    if hp["prune"]:
        rng = rng_for(hp["seed"], 0)
        n_hold = int(math.floor(hp["prune_fraction"] * X.shape[0] + 0.5))
        perm = rng.permutation(X.shape[0])
        hold = np.sort(perm[:n_hold])
        grow = np.sort(perm[n_hold:])
        tree = grow_tree(X, y, grow, hp["max_depth"], min_leaf, split_zero_gain=bool(hp["split_zero_gain"]))
        if n_hold:
            tree = prune_reduced_error(tree, X[hold], y[hold])
    else:
        tree = grow_tree(X, y, rows, hp["max_depth"], min_leaf, split_zero_gain=bool(hp["split_zero_gain"]))
    return TreeModel(hp, X.shape[1], tree)


class ForestModel(TrainedModel):
    kind = "RF"

    def __init__(self, hp, n_features, trees: list[Tree]):
        super().__init__(hp, n_features)
        self.trees = trees

    def votes(self, rows) -> np.ndarray:
        return np.stack([(t.predict_value(rows) > 0.5) for t in self.trees]).astype(np.int64)

    def _score(self, rows):
        # fraction of trees voting failed; a tie (score 0.5) stays stable
        return self.votes(rows).sum(axis=0) / len(self.trees)

    def params_dict(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_params(cls, hp, n_features, params):
        return cls(hp, n_features, [Tree.from_dict(t) for t in params["trees"]])


def train_rf(X, y, hp: dict | None = None) -> ForestModel:
    hp = merge_hp(RF_DEFAULTS, hp)
    X, y = check_xy(X, y)
    n, d = X.shape
    n_trees = int(hp["n_trees"])
    if n_trees < 1:
        raise ModelError("n_trees must be at least 1")
    mtry = resolve_max_features(hp["max_features"], d)
    trees = []
    for t in range(n_trees):
        rng = rng_for(hp["seed"], t)
        rows = np.sort(rng.integers(0, n, size=n)) if hp["bootstrap"] else np.arange(n)
        trees.append(
            grow_tree(X, y, rows, hp["max_depth"], int(hp["min_leaf"]), mtry, rng, bool(hp["split_zero_gain"]))
        )
    return ForestModel(hp, d, trees)
