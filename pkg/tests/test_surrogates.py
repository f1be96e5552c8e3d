import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfslope import surrogates as S
from rfslope.surrogates import persistence
from rfslope.surrogates.base import Standardizer, fit_standardizer, sigmoid
from rfslope.surrogates.ensemble import bootstrap_indices, hard_vote, stratified_folds
from rfslope.surrogates.linear import LogisticModel, lr_gradient, lr_objective
from rfslope.surrogates.neighbors import pairwise_distances
from rfslope.surrogates.svm import SVCModel, kernel_matrix, kkt_gap, solve_dual
from rfslope.surrogates.tree import Tree, best_split, grow_tree


def blobs(n=60, d=5, seed=0, gap=1.5):
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 3 == 0).astype(np.int64)
    X = rng.normal(size=(n, d)) + gap * y[:, None]
    return X, y


# --- standardisation -------------------------------------------------------


def test_standardizer_reference():
    s = fit_standardizer(np.array([[1.0], [2.0], [3.0]]))
    assert s.apply([[1.0], [2.0], [3.0]])[:, 0] == pytest.approx([-1.2247449, 0.0, 1.2247449], abs=1e-7)


def test_standardizer_constant_column_passes_through():
    X = np.array([[5.0, 1.0], [5.0, 2.0]])
    s = fit_standardizer(X)
    assert np.array_equal(s.apply(X)[:, 0], X[:, 0])


def test_standardizer_uses_training_stats():
    s = fit_standardizer(np.array([[0.0], [2.0]]))
    assert s.apply([[4.0]])[0, 0] == pytest.approx(3.0)


@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 10**6))
def test_standardized_columns_invariants(n, d, seed):
    X = np.random.default_rng(seed).normal(3.0, 7.0, size=(n, d))
    Z = fit_standardizer(X).apply(X)
    assert np.all(np.abs(Z.mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(Z.std(axis=0) - 1.0) <= 1e-9)


def test_standardizer_needs_rows():
    with pytest.raises(S.ModelError):
        fit_standardizer(np.zeros((0, 3)))


# --- logistic regression ---------------------------------------------------


def test_lr_zero_weights_half():
    m = LogisticModel({}, 3, Standardizer(np.zeros(3), np.ones(3)), np.zeros(3), 0.0)
    p = m.predict_score(np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(p == 0.5)
    assert np.all(m.predict(np.ones((2, 3))) == 0)  # 0.5 exactly is stable


def test_lr_separable_toy():
    m = S.train("LR", [[-1.0], [1.0]], [0, 1])
    assert np.array_equal(m.predict([[-1.0], [1.0]]), [0, 1])


def test_lr_gradient_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 4))
    y = rng.integers(0, 2, 30).astype(float)
    for _ in range(10):
        w, c, C = rng.normal(size=4), rng.normal(), 10 ** rng.uniform(-1, 1)
        gw, gc = lr_gradient(w, c, X, y, C)
        g = np.append(gw, gc)
        theta = np.append(w, c)
        fd = np.empty(5)
        for i in range(5):
            h = 1e-6 * max(1.0, abs(theta[i]))
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (lr_objective(tp[:4], tp[4], X, y, C) - lr_objective(tm[:4], tm[4], X, y, C)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_lr_converges_to_stationary_point():
    X, y = blobs()
    m = S.train("LR", X, y)
    Z = m.scaler.apply(X)
    gw, gc = lr_gradient(m.w, m.c, Z, y.astype(float), 1.0)
    assert max(np.abs(gw).max(), abs(gc)) <= 1e-6


def test_lr_single_class_is_degenerate():
    with pytest.raises(S.DegenerateModelError):
        S.train("LR", np.ones((4, 2)), [1, 1, 1, 1])


# --- k nearest neighbours --------------------------------------------------


def test_knn_k1_recalls_training_point():
    X, y = blobs(30)
    m = S.train("KNN", X, y, {"k": 1})
    assert np.array_equal(m.predict(X), y)


def test_knn_majority_and_score():
    X = np.array([[0.0], [1.0], [2.0], [10.0]])
    y = np.array([1, 1, 0, 0])
    m = S.train("KNN", X, y, {"k": 3})
    assert m.predict_score([[1.0]])[0] == pytest.approx(2 / 3)
    assert m.predict([[1.0]])[0] == 1


def test_knn_ties_prefer_lower_index(backend):
    rng = np.random.default_rng(4)
    X = rng.integers(0, 3, size=(25, 2)).astype(float)
    y = rng.integers(0, 2, 25)
    m = S.train("KNN", X, y, {"k": 4})
    q = rng.integers(0, 3, size=(10, 2)).astype(float)
    got = m.neighbours(q)
    Z, Zq = m.scaler.apply(X), m.scaler.apply(q)
    for r in range(10):
        d = [(float(np.sqrt(np.sum((Zq[r] - Z[i]) ** 2))), i) for i in range(25)]
        assert list(got[r]) == [i for _, i in sorted(d)[:4]]


def test_knn_k_equals_n_predicts_majority():
    X, y = blobs(21)
    m = S.train("KNN", X, y, {"k": 21})
    majority = int(y.mean() > 0.5)
    assert np.all(m.predict(np.random.default_rng(0).normal(size=(7, 5))) == majority)


def test_knn_k_too_large():
    with pytest.raises(S.ModelError):
        S.train("KNN", np.zeros((3, 1)), [0, 1, 0], {"k": 4})


@pytest.mark.parametrize("metric", ["euclidean", "manhattan", "minkowski"])
def test_distance_backends_agree(metric):
    from rfslope import _accel

    rng = np.random.default_rng(0)
    q, x = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
    with _accel.backend("numba"):
        a = pairwise_distances(q, x, metric, 3.0)
    with _accel.backend("numpy"):
        b = pairwise_distances(q, x, metric, 3.0)
    assert np.allclose(a, b, rtol=1e-13)


# --- decision tree ---------------------------------------------------------


def test_dt_single_split_reference(backend):
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    m = S.train("DT", X, y, {"min_leaf": 1})
    assert m.tree.n_nodes == 3
    assert m.tree.threshold[0] == 1.5
    assert np.array_equal(m.predict(X), y)


def test_dt_split_matches_exhaustive_search(backend):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 3)).round(1)
    y = rng.integers(0, 2, 40)

    def gini_sum(lab):
        n = lab.size
        return 0.0 if n == 0 else n - (np.sum(lab) ** 2 + np.sum(1 - lab) ** 2) / n

    best = (-1.0, None)
    for f in range(3):
        vals = np.unique(X[:, f])
        for t in (vals[:-1] + vals[1:]) / 2:
            m = X[:, f] <= t
            gain = gini_sum(y) - gini_sum(y[m]) - gini_sum(y[~m])
            if gain > best[0] + 1e-12:
                best = (gain, (f, t))
    f, t, gain = best_split(X, y, np.arange(40), np.arange(3), 1)
    assert (f, t) == best[1]
    assert gain == pytest.approx(best[0] / 40, abs=1e-12)


def test_dt_pure_input_is_leaf():
    m = S.train("DT", np.random.default_rng(0).normal(size=(10, 2)), np.ones(10, dtype=int))
    assert m.tree.n_nodes == 1
    assert np.all(m.predict_score(np.zeros((3, 2))) == 1.0)


def test_dt_zero_gain_gives_majority_leaf():
    # XOR: every single split leaves Gini impurity unchanged
    X4 = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y4 = np.array([0, 1, 1, 0])
    m4 = S.train("DT", X4, y4, {"min_leaf": 1})
    assert m4.tree.n_nodes == 1
    assert np.all(m4.predict(X4) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 3), st.integers(0, 10**6))
def test_dt_fits_any_consistent_dataset(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, d)).astype(float)
    # labels as a function of the row, so duplicates agree
    y = (np.abs(np.sin(X @ np.arange(1, d + 1) * 1.7)) > 0.5).astype(int)
    m = S.train("DT", X, y, {"max_depth": None, "min_leaf": 1, "split_zero_gain": True})
    assert np.array_equal(m.predict(X), y)


def test_dt_pruning_shrinks_noisy_tree():
    X, y = blobs(200, gap=0.8)
    full = S.train("DT", X, y, {"min_leaf": 1, "max_depth": None})
    pruned = S.train("DT", X, y, {"min_leaf": 1, "max_depth": None, "prune": True})
    assert pruned.tree.n_nodes < full.tree.n_nodes


def test_tree_roundtrip_dict():
    X, y = blobs()
    t = S.train("DT", X, y).tree
    assert Tree.from_dict(t.to_dict()).digest() == t.digest()


# --- support vector classifier ---------------------------------------------


def test_svc_two_point_analytic():
    m = S.train("SVC", [[-1.0], [1.0]], [0, 1], {"kernel": "linear", "C": 1e6, "tol": 1e-10})
    xs = np.linspace(-3, 3, 13)[:, None]
    assert m.predict_score(xs) == pytest.approx(xs[:, 0], abs=1e-6)
    assert m.b == pytest.approx(0.0, abs=1e-6)
    assert m.predict([[0.0]])[0] == 0  # f = 0 exactly is stable


def test_svc_box_and_kkt(backend):
    X, y = blobs(50, gap=0.7)
    Z = fit_standardizer(X).apply(X)
    K = kernel_matrix(Z, Z, "rbf", 0.2)
    ypm = 2.0 * y - 1
    alpha, grad, _, gap = solve_dual(K, ypm, 1.0, 1e-3, 100000)
    assert np.all(alpha >= 0) and np.all(alpha <= 1.0)
    assert gap <= 1e-3
    assert kkt_gap(alpha, grad, ypm, 1.0) <= 1e-3
    assert abs(alpha @ ypm) <= 1e-9


def test_svc_backends_agree():
    from rfslope import _accel

    X, y = blobs(40, gap=0.7)
    with _accel.backend("numba"):
        a = S.train("SVC", X, y)
    with _accel.backend("numpy"):
        b = S.train("SVC", X, y)
    assert np.allclose(a.coef, b.coef, atol=1e-12) and a.b == pytest.approx(b.b, abs=1e-12)


def test_svc_xor_rbf():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    m = S.train("SVC", X, y, {"C": 10.0, "tol": 1e-8})
    assert np.array_equal(m.predict(X), y)
    # compare the dual objective with a grid search over feasible duals
    Z = m.scaler.apply(X)
    K = kernel_matrix(Z, Z, "rbf", m.gamma)
    ypm = 2.0 * y - 1
    Q = np.outer(ypm, ypm) * K
    obj = lambda a: 0.5 * a @ Q @ a - a.sum()
    alpha, *_ = solve_dual(K, ypm, 10.0, 1e-10, 100000)
    grid = np.linspace(0, 10, 41)
    best = min(obj(np.array([a, b, c, a + b - c])) for a in grid for b in grid for c in grid if 0 <= a + b - c <= 10)
    assert obj(alpha) <= best + 1e-9


def test_svc_nonconvergence_reports_violation():
    X, y = blobs(40, gap=0.3)
    with pytest.raises(S.ConvergenceError) as err:
        S.train("SVC", X, y, {"max_iter": 2})
    assert err.value.violation > 0


# --- random forest ---------------------------------------------------------


def test_rf_degenerates_to_dt(backend):
    X, y = blobs(80, gap=0.6)
    dt = S.train("DT", X, y, {"max_depth": 5, "min_leaf": 2})
    rf = S.train("RF", X, y, {"n_trees": 1, "bootstrap": False, "max_features": "all", "max_depth": 5, "min_leaf": 2})
    q = np.random.default_rng(1).normal(size=(200, 5))
    assert np.array_equal(rf.predict(q), dt.predict(q))
    assert rf.trees[0].digest() == dt.tree.digest()


def test_rf_single_label():
    X = np.random.default_rng(0).normal(size=(10, 3))
    for lab in (0, 1):
        m = S.train("RF", X, np.full(10, lab), {"n_trees": 5})
        assert np.all(m.predict_score(X) == lab)
        assert np.all(m.predict(X) == lab)


def test_rf_seeded_reproducible():
    X, y = blobs()
    a = S.train("RF", X, y, {"n_trees": 7, "seed": 5})
    b = S.train("RF", X, y, {"n_trees": 7, "seed": 5})
    c = S.train("RF", X, y, {"n_trees": 7, "seed": 6})
    assert [t.digest() for t in a.trees] == [t.digest() for t in b.trees]
    assert [t.digest() for t in a.trees] != [t.digest() for t in c.trees]


def test_rf_vote_threshold():
    X, y = blobs()
    m = S.train("RF", X, y, {"n_trees": 10})
    s = m.predict_score(X)
    assert np.array_equal(m.predict(X), (s > 0.5).astype(np.uint8))
    assert np.all(np.isclose(s * 10, np.round(s * 10)))


# --- gaussian naive bayes --------------------------------------------------


def test_gnb_symmetric_midpoint():
    X = np.array([[-1.0], [1.0], [1.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    m = S.train("GNB", X, y)
    assert m.posterior([[1.0]])[0] == pytest.approx([0.5, 0.5], abs=1e-12)


def test_gnb_posteriors_normalised():
    X, y = blobs()
    m = S.train("GNB", X, y)
    p = m.posterior(np.random.default_rng(2).normal(scale=3, size=(100, 5)))
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)


def test_gnb_hand_computation():
    X = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [4.0, 6.0], [5.0, 4.0]])
    y = np.array([0, 0, 0, 1, 1])
    m = S.train("GNB", X, y)
    mean, sd = X.mean(axis=0), X.std(axis=0)
    Z = (X - mean) / sd
    floor = 1e-9 * Z.var(axis=0).mean()
    q = (np.array([3.0, 3.0]) - mean) / sd
    joint = []
    for c, prior in ((0, 3 / 5), (1, 2 / 5)):
        mu, var = Z[y == c].mean(axis=0), Z[y == c].var(axis=0) + floor
        dens = np.prod(np.exp(-((q - mu) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var))
        joint.append(prior * dens)
    assert m.predict_score([[3.0, 3.0]])[0] == pytest.approx(joint[1] / sum(joint), rel=1e-10)


# --- ensembles -------------------------------------------------------------


def test_stacking_meta_shape_and_no_leakage():
    X, y = blobs(40, d=3, gap=1.0)
    hp = {"base_hp": {"RF": {"n_trees": 10}}}
    meta, folds = S.stacking_meta_features(X, y, hp)
    assert meta.shape == (40, 6)
    for i in (0, 7, 33):
        mates = (folds == folds[i]) & (np.arange(40) != i)
        X2 = X.copy()
        X2[mates] += 100.0
        meta2, folds2 = S.stacking_meta_features(X2, y, hp)
        assert np.array_equal(folds2, folds)
        assert np.array_equal(meta2[i], meta[i])
        others = folds != folds[i]
        assert not np.array_equal(meta2[others], meta[others])


def test_stacking_separable_toy():
    X, y = blobs(40, d=2, gap=8.0)
    m = S.train("STACK", X, y, {"base_hp": {"RF": {"n_trees": 10}}})
    assert np.array_equal(m.predict(X), y)


def test_stacking_errors():
    with pytest.raises(S.ModelError):
        S.train("STACK", np.zeros((8, 2)), [0, 1] * 4)
    X, y = blobs(20)
    y = np.zeros(20, dtype=int)
    y[0] = 1
    with pytest.raises(S.DegenerateModelError):
        S.train("STACK", X, y)


def test_stratified_folds_balanced():
    y = np.r_[np.zeros(23), np.ones(7)].astype(int)
    f = stratified_folds(y, 5, 0)
    sizes = np.bincount(f, minlength=5)
    assert sizes.max() - sizes.min() <= 1
    pos = np.bincount(f[y == 1], minlength=5)
    assert pos.max() - pos.min() <= 1


def test_bagging_identity_sample_equals_base():
    X, y = blobs()
    base_hp = {"n_trees": 5, "seed": 3}
    bag = S.train("BAG", X, y, {"n_estimators": 1, "bootstrap": False, "base_hp": base_hp})
    rf = S.train("RF", X, y, base_hp)
    q = np.random.default_rng(0).normal(size=(50, 5))
    assert np.array_equal(bag.predict(q), rf.predict(q))


def test_bootstrap_sample_law():
    s = bootstrap_indices(1000, 0, 0)
    assert s.size == 1000 and np.unique(s).size < 1000
    frac = np.mean([np.unique(bootstrap_indices(1000, 0, e)).size / 1000 for e in range(200)])
    assert abs(frac - (1 - math.exp(-1))) <= 0.03


def test_bagging_votes():
    X, y = blobs()
    m = S.train("BAG", X, y, {"n_estimators": 4, "base_hp": {"n_trees": 5}})
    s = m.predict_score(X)
    assert np.all(np.isin(s, [0, 0.25, 0.5, 0.75, 1.0]))
    assert np.all(m.predict(X)[s == 0.5] == 0)


def test_hard_vote_rules():
    assert hard_vote(np.array([[1], [1], [1], [0], [0], [0]]))[0] == 0
    assert hard_vote(np.array([[1], [1], [1], [1], [0], [0]]))[0] == 1
    assert hard_vote(np.ones((6, 1)))[0] == 1


def test_voting_equals_mode_of_bases():
    X, y = blobs(50, gap=0.6)
    m = S.train("VOTE", X, y)
    q = np.random.default_rng(3).normal(size=(300, 5))
    base = m.base_predictions(q)
    mode = (base.sum(axis=0) > 3).astype(np.uint8)
    assert np.array_equal(m.predict(q), mode)
    s = m.predict_score(q)
    assert np.all((s >= 0) & (s <= 1))


# --- shared contract -------------------------------------------------------


FAST_HP = {"RF": {"n_trees": 10}, "BAG": {"n_estimators": 3, "base_hp": {"n_trees": 5}}, "STACK": {"base_hp": {"RF": {"n_trees": 5}}}}


@pytest.mark.parametrize("kind", S.KINDS)
def test_contract_all_kinds(kind, tmp_path):
    X, y = blobs(40, d=4, gap=1.0)
    m = S.train(kind, X, y, FAST_HP.get(kind))
    q = np.random.default_rng(5).normal(size=(25, 4))
    assert m.kind == kind
    p, s = m.predict(q), m.predict_score(q)
    assert p.shape == s.shape == (25,)
    assert set(np.unique(p)) <= {0, 1}
    assert m.predict(np.empty((0, 4))).shape == (0,)
    assert m.predict_score(np.empty((0, 4))).shape == (0,)
    with pytest.raises(S.WidthMismatchError):
        m.predict(np.zeros((2, 3)))
    again = S.train(kind, X, y, FAST_HP.get(kind))
    assert np.array_equal(again.predict_score(q), s)
    persistence.save_model(m, tmp_path / "m.json")
    back = persistence.load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict_score(q), s)
    assert np.array_equal(back.predict(q), p)


def test_unknown_kind_and_hp():
    with pytest.raises(S.ModelError):
        S.train("MLP", np.zeros((2, 1)), [0, 1])
    with pytest.raises(S.ModelError):
        S.train("LR", np.zeros((2, 1)), [0, 1], {"bogus": 1})


def test_bad_documents():
    with pytest.raises(S.ModelError):
        persistence.loads('{"format": "other"}')
    X, y = blobs(20)
    doc = persistence.model_to_doc(S.train("LR", X, y))
    doc["version"] = 99
    with pytest.raises(S.ModelError):
        persistence.model_from_doc(doc)


def test_sigmoid_stable():
    z = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    s = sigmoid(z)
    assert s[0] == 0.0 and s[-1] == 1.0 and s[2] == 0.5
    assert s[1] + s[3] == pytest.approx(1.0, abs=1e-15)
