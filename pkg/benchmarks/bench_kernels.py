"""Time the numba and numpy backends of each hot kernel on full-scale inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--only cholesky,fos_min] [--json out.json]

JIT compilation is excluded: every kernel runs once before timing starts.
Reported times are the best of ``--repeat`` runs.
"""
import argparse
import json
import time

import numpy as np

from rfslope import _accel
from rfslope.randfield import FieldGenerator, FieldStats, build_covariance, cholesky_factor, lognormal_moments, realization_rng
from rfslope.slope_oracle import SlopeGeometry, default_search, enumerate_circles, grid_for, raw_fos_min
from rfslope.surrogates.neighbors import pairwise_distances
from rfslope.surrogates.svm import kernel_matrix, solve_dual
from rfslope.surrogates.tree import grow_tree


def make_cases():
    geometry = SlopeGeometry()
    grid = grid_for(geometry)
    stats = FieldStats(18.6, 0.5, 25.0, 1.0)
    moments = lognormal_moments(18.6, 0.5)
    cov = build_covariance(grid, moments, stats)
    gen = FieldGenerator(grid, stats)
    search = default_search(geometry)
    circles = enumerate_circles(geometry, search)
    fields = [gen.sample(realization_rng(0, i)).values for i in range(20)]

    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 800))
    y = (X[:, :5].sum(axis=1) + rng.normal(size=500) > 0).astype(np.int64)
    Q = rng.normal(size=(2000, 800))
    Xs = X[:300, :50]
    K = kernel_matrix(Xs, Xs, "rbf", 1.0 / 50)
    ypm = 2.0 * y[:300] - 1

    return {
        "covariance": lambda: build_covariance(grid, moments, stats),
        "cholesky": lambda: cholesky_factor(cov),
        "sample x20": lambda: [gen.sample(realization_rng(1, i)) for i in range(20)],
        "circle build": lambda: enumerate_circles(geometry, search),
        "fos_min x20": lambda: [raw_fos_min(f, circles) for f in fields],
        "distances": lambda: pairwise_distances(Q, X),
        "tree growth": lambda: grow_tree(X, y, np.arange(500), max_depth=12, min_leaf=2, max_features=28, rng=np.random.default_rng(0)),
        "smo": lambda: solve_dual(K, ypm, 1.0, 1e-3, 100000),
    }


def best_of(fn, repeat):
    fn()  # warm-up, also triggers compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--only", help="comma-separated kernel names")
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args(argv)

    cases = make_cases()
    names = args.only.split(",") if args.only else list(cases)
    results = {}
    print(f"{'kernel':<16s}{'numba [s]':>12s}{'numpy [s]':>12s}{'speed-up':>10s}")
    for name in names:
        row = {}
        for backend in ("numba", "numpy"):
            with _accel.backend(backend):
                row[backend] = best_of(cases[name], args.repeat)
        results[name] = row
        print(f"{name:<16s}{row['numba']:>12.4f}{row['numpy']:>12.4f}{row['numpy'] / row['numba']:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
