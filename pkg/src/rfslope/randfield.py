"""Stationary anisotropic lognormal random fields by covariance Cholesky factorisation.

The log-strength field has the separable exponential (Markov) covariance

    A(lx, ly) = sigma_ln**2 * exp(-|lx|/delta_h - |ly|/delta_v)

evaluated between cell centres.  One realisation is ``exp(L @ eps + mu_ln)``
with ``A = L @ L.T`` and ``eps`` i.i.d. standard normal in canonical cell order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from ._accel import njit

JITTER_LADDER = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


class DomainError(ValueError):
    """Raised for statistical parameters outside their valid domain."""


class FactorizationError(np.linalg.LinAlgError):
    """Covariance matrix stayed indefinite after the largest jitter."""

    def __init__(self, pivot: int, jitter: float):
        self.pivot = pivot
        self.jitter = jitter
        super().__init__(
            f"non-positive pivot at index {pivot} (jitter {jitter:.1e} relative to the diagonal scale)"
        )


@dataclass(frozen=True)
class GridSpec:
    """Cell-centre coordinates in canonical (row-major, top-left first) order."""

    cell_size: float
    cell_centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        centers = np.asarray(self.cell_centers, dtype=np.float64)
        if self.cell_size <= 0:
            raise DomainError("cell_size must be positive")
        if centers.ndim != 2 or centers.shape[1] != 2 or centers.shape[0] == 0:
            raise DomainError("cell_centers must be a non-empty (n, 2) array")
        centers.setflags(write=False)
        object.__setattr__(self, "cell_centers", centers)

    @property
    def n_cells(self) -> int:
        return self.cell_centers.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return self.cell_size == other.cell_size and np.array_equal(
            self.cell_centers, other.cell_centers
        )

    def __hash__(self):
        return hash((self.cell_size, self.cell_centers.tobytes()))


@dataclass(frozen=True)
class FieldStats:
    mu_cu: float
    cov: float
    delta_h: float
    delta_v: float

    def __post_init__(self):
        if not self.mu_cu > 0:
            raise DomainError(f"mu_cu must be positive, got {self.mu_cu}")
        if not self.cov >= 0:
            raise DomainError(f"cov must be non-negative, got {self.cov}")
        if not (self.delta_h > 0 and self.delta_v > 0):
            raise DomainError("correlation distances must be positive")

    @property
    def xi(self) -> float:
        """Anisotropy ratio delta_h / delta_v."""
        return self.delta_h / self.delta_v

    @property
    def sigma_cu(self) -> float:
        return self.cov * self.mu_cu

    @property
    def ident(self) -> str:
        return f"mu={self.mu_cu:g},cov={self.cov:g},dh={self.delta_h:g},dv={self.delta_v:g}"


@dataclass(frozen=True)
class LognormalMoments:
    mu_ln: float
    sigma_ln: float


@dataclass(frozen=True)
class CovarianceFactor:
    matrix_a: np.ndarray = field(repr=False)
    factor_l: np.ndarray = field(repr=False)
    jitter_applied: float = 0.0

    def residual(self) -> float:
        """max |L L^T - (A + jitter I)|."""
        n = self.matrix_a.shape[0]
        target = self.matrix_a + self.jitter_applied * np.eye(n)
        return float(np.max(np.abs(self.factor_l @ self.factor_l.T - target)))


@dataclass(frozen=True)
class Realization:
    values: np.ndarray = field(repr=False)
    seed_index: int
    stats_ref: str


def lognormal_moments(mu_cu: float, cov: float) -> LognormalMoments:
    if not mu_cu > 0:
        raise DomainError(f"mu_cu must be positive, got {mu_cu}")
    if not cov >= 0:
        raise DomainError(f"cov must be non-negative, got {cov}")
    sigma_ln = math.sqrt(math.log1p(cov * cov))
    mu_ln = math.log(mu_cu) - 0.5 * sigma_ln * sigma_ln
    return LognormalMoments(mu_ln, sigma_ln)


def covariance(lx, ly, sigma_ln: float, delta_h: float, delta_v: float):
    """Anisotropic exponential covariance of the log field at lag (lx, ly)."""
    return sigma_ln**2 * np.exp(-np.abs(lx) / delta_h - np.abs(ly) / delta_v)


@njit
def _covariance_nb(xy, var, delta_h, delta_v):
    n = xy.shape[0]
    a = np.empty((n, n))
    for i in range(n):
        a[i, i] = var
        for j in range(i):
            v = var * np.exp(-abs(xy[i, 0] - xy[j, 0]) / delta_h - abs(xy[i, 1] - xy[j, 1]) / delta_v)
            a[i, j] = v
            a[j, i] = v
    return a


def _covariance_np(xy, var, delta_h, delta_v):
    lx = np.abs(xy[:, None, 0] - xy[None, :, 0])
    ly = np.abs(xy[:, None, 1] - xy[None, :, 1])
    a = var * np.exp(-lx / delta_h - ly / delta_v)
    # exact symmetry regardless of exp rounding
    return np.tril(a) + np.tril(a, -1).T


def build_covariance(grid: GridSpec, moments: LognormalMoments, stats: FieldStats) -> np.ndarray:
    var = moments.sigma_ln**2
    xy = np.ascontiguousarray(grid.cell_centers)
    if _accel.use_numba():
        return _covariance_nb(xy, var, float(stats.delta_h), float(stats.delta_v))
    return _covariance_np(xy, var, stats.delta_h, stats.delta_v)


@njit
def _cholesky_nb(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > 0.0:
            return low, j
        d = np.sqrt(s)
        low[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= low[i, k] * low[j, k]
            low[i, j] = t / d
    return low, -1


def _cholesky_np(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        row = low[j, :j]
        s = a[j, j] - row @ row
        if not s > 0.0:
            return low, j
        d = math.sqrt(s)
        low[j, j] = d
        low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ row) / d
    return low, -1


def _cholesky(a: np.ndarray):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _accel.use_numba():
        low, pivot = _cholesky_nb(a)
        return low, int(pivot)
    return _cholesky_np(a)


def cholesky_factor(a: np.ndarray) -> CovarianceFactor:
    """Cholesky factor of a symmetric matrix with escalating diagonal jitter.

    Jitter is ``eps * scale`` with ``scale`` the mean diagonal (sigma_ln**2 for a
    covariance matrix) and ``eps`` walking :data:`JITTER_LADDER`.  An all-zero
    matrix (a deterministic field) factors to ``L = 0``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("covariance matrix must be square")
    if not np.array_equal(a, a.T):
        raise ValueError("covariance matrix must be symmetric")
    n = a.shape[0]
    if not np.any(a):
        return CovarianceFactor(a, np.zeros_like(a), 0.0)
    scale = float(np.mean(np.diag(a)))
    low, pivot = _cholesky(a)
    if pivot < 0:
        return CovarianceFactor(a, low, 0.0)
    eye = np.eye(n)
    eps = 0.0
    for eps in JITTER_LADDER:
        jitter = eps * scale
        low, pivot = _cholesky(a + jitter * eye)
        if pivot < 0:
            return CovarianceFactor(a, low, jitter)
    raise FactorizationError(pivot, eps)


@njit
def _lower_matvec_nb(low, eps, shift):
    n = low.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(i + 1):
            s += low[i, k] * eps[k]
        out[i] = np.exp(s + shift)
    return out


def _lower_matvec_np(low, eps, shift):
    return np.exp(low @ eps + shift)


def realization_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox stream for one realisation, keyed by (seed, *keys).

    Streams for distinct keys are independent, so realisations can be drawn in
    any order or on any worker.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def sample_realization(
    factor: CovarianceFactor,
    moments: LognormalMoments,
    rng: np.random.Generator,
    seed_index: int = 0,
    stats_ref: str = "",
) -> Realization:
    low = factor.factor_l
    eps = rng.standard_normal(low.shape[0])
    if _accel.use_numba():
        values = _lower_matvec_nb(np.ascontiguousarray(low), eps, moments.mu_ln)
    else:
        values = _lower_matvec_np(low, eps, moments.mu_ln)
    values.setflags(write=False)
    return Realization(values, seed_index, stats_ref)


class FieldGenerator:
    """Factor once per (grid, stats), then sample realisations cheaply."""

    def __init__(self, grid: GridSpec, stats: FieldStats):
        self.grid = grid
        self.stats = stats
        self.moments = lognormal_moments(stats.mu_cu, stats.cov)
        self.factor = cholesky_factor(build_covariance(grid, self.moments, stats))

    def with_mean(self, mu_cu: float) -> "FieldGenerator":
        """Same correlation structure and COV, different mean.

        sigma_ln depends only on COV, so the factor is shared.
        """
        clone = object.__new__(FieldGenerator)
        clone.grid = self.grid
        clone.stats = FieldStats(mu_cu, self.stats.cov, self.stats.delta_h, self.stats.delta_v)
        clone.moments = lognormal_moments(mu_cu, self.stats.cov)
        clone.factor = self.factor
        return clone

    def sample(self, rng: np.random.Generator, seed_index: int = 0) -> Realization:
        return sample_realization(self.factor, self.moments, rng, seed_index, self.stats.ident)
