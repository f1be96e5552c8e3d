"""Seeded Monte Carlo campaigns, the RFMC dataset file, splits and p_f."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import multiprocessing as mp
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .randfield import FieldGenerator, FieldStats, realization_rng
from .slope_oracle import SearchSpec, SlopeGeometry, StabilityOracle, default_search, grid_for

MAGIC = b"RFMC"
FORMAT_VERSION = 1
DEFAULT_MU_LIST = (18.6, 22.3, 26.0, 29.7, 33.5)

STABLE, FAILED = 0, 1


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class CampaignSpec:
    mu_list: tuple[float, ...] = DEFAULT_MU_LIST
    cov: float = 0.1
    delta_h: float = 1.0
    delta_v: float = 1.0
    n_per_mu: int = 2000
    seed: int = 0
    geometry: SlopeGeometry = field(default_factory=SlopeGeometry)
    search: SearchSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu_list", tuple(float(m) for m in self.mu_list))
        if self.n_per_mu < 1:
            raise ValueError("n_per_mu must be at least 1")
        if not self.mu_list:
            raise ValueError("mu_list must not be empty")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        FieldStats(self.mu_list[0], self.cov, self.delta_h, self.delta_v)

    @property
    def xi(self) -> float:
        return self.delta_h / self.delta_v

    @property
    def label(self) -> str:
        return f"U_{{{self.cov:g},{self.xi:g}}}"

    @property
    def search_spec(self) -> SearchSpec:
        return self.search or default_search(self.geometry)

    @property
    def n_records(self) -> int:
        return len(self.mu_list) * self.n_per_mu

    def to_dict(self) -> dict:
        return {
            "mu_list": list(self.mu_list),
            "cov": self.cov,
            "delta_h": self.delta_h,
            "delta_v": self.delta_v,
            "n_per_mu": self.n_per_mu,
            "seed": self.seed,
        }


@dataclass
class Dataset:
    """Realisations (rows, canonical cell order), their means and labels."""

    values: np.ndarray
    mu: np.ndarray
    labels: np.ndarray
    header: dict
    fos: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.values.ndim != 2:
            raise DataError("values must be a 2-D array")
        n = self.values.shape[0]
        if self.mu.shape != (n,) or self.labels.shape != (n,):
            raise DataError("values, mu and labels disagree on the record count")
        if np.any(self.labels > 1):
            raise DataError("labels must be 0 (stable) or 1 (failed)")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def cov(self) -> float:
        return float(self.header["spec"]["cov"])

    @property
    def xi(self) -> float:
        spec = self.header["spec"]
        return float(spec["delta_h"]) / float(spec["delta_v"])

    @property
    def name(self) -> str:
        return self.header.get("label", "")

    @property
    def p_f(self) -> float:
        return probability_of_failure(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        fos = None if self.fos is None else self.fos[idx]
        return Dataset(self.values[idx], self.mu[idx], self.labels[idx], dict(self.header), fos)


# --------------------------------------------------------------------------
# campaign execution

_worker_state: dict = {}


def _init_worker(spec: CampaignSpec):
    oracle = StabilityOracle(spec.geometry, spec.search_spec)
    grid = grid_for(spec.geometry)
    base = FieldGenerator(grid, FieldStats(spec.mu_list[0], spec.cov, spec.delta_h, spec.delta_v))
    _worker_state["spec"] = spec
    _worker_state["oracle"] = oracle
    _worker_state["generators"] = [base.with_mean(m) for m in spec.mu_list]


def _run_chunk(tasks: list[tuple[int, int]]):
    spec: CampaignSpec = _worker_state["spec"]
    oracle: StabilityOracle = _worker_state["oracle"]
    gens = _worker_state["generators"]
    n_cells = oracle.n_cells
    values = np.empty((len(tasks), n_cells))
    fos = np.empty(len(tasks))
    for row, (mi, k) in enumerate(tasks):
        rng = realization_rng(spec.seed, mi, k)
        real = gens[mi].sample(rng, seed_index=k)
        values[row] = real.values
        fos[row], _ = oracle.fos_min(real.values)
    return values, fos


def campaign_header(spec: CampaignSpec) -> dict:
    return {
        "format": "RFMC",
        "label": spec.label,
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "geometry": spec.geometry.to_dict(),
        "search_spec": spec.search_spec.to_dict(),
        "n_cells": grid_for(spec.geometry).n_cells,
        "n_records": spec.n_records,
        "substreams": "philox(seed, mu_index, realization_index)",
        "software": {"name": "rfslope", "version": __version__},
    }


def run_campaign(spec: CampaignSpec, workers: int = 1, chunk_size: int = 64) -> Dataset:
    """Sample, classify and record every (mu, k) realisation.

    Each realisation draws from its own Philox substream keyed by
    (seed, mu index, k), so the result is identical for any ``workers``.
    """
    tasks = [(mi, k) for mi in range(len(spec.mu_list)) for k in range(spec.n_per_mu)]
    chunks = [tasks[i : i + chunk_size] for i in range(0, len(tasks), chunk_size)]
    if workers <= 1:
        _init_worker(spec)
        results = [_run_chunk(c) for c in chunks]
    else:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker, initargs=(spec,)) as pool:
            results = list(pool.map(_run_chunk, chunks))
    values = np.concatenate([r[0] for r in results])
    fos = np.concatenate([r[1] for r in results])
    mu = np.array([spec.mu_list[mi] for mi, _ in tasks])
    labels = (fos < 1.0).astype(np.uint8)
    return Dataset(values, mu, labels, campaign_header(spec), fos)


def relabel(dataset: Dataset, oracle: StabilityOracle | None = None) -> np.ndarray:
    """Re-run the oracle on stored values; returns fresh labels."""
    if oracle is None:
        geometry = SlopeGeometry(**dataset.header["geometry"])
        oracle = StabilityOracle(geometry, SearchSpec(**dataset.header["search_spec"]))
    return np.array([oracle.fos_min(v)[0] < 1.0 for v in dataset.values], dtype=np.uint8)


# --------------------------------------------------------------------------
# probabilities of failure


def as_binary(labels) -> np.ndarray:
    """Labels as a uint8 array with 1 = failed."""
    arr = np.asarray(labels)
    if arr.dtype.kind in "US":
        bad = ~np.isin(arr, ["stable", "failed"])
        if np.any(bad):
            raise DataError(f"unknown label {arr[bad][0]!r}")
        return (arr == "failed").astype(np.uint8)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise DataError("numeric labels must be 0 or 1")
    return arr.astype(np.uint8)


def probability_of_failure(labels) -> float:
    y = as_binary(labels)
    if y.size == 0:
        raise DataError("probability of failure of an empty label set")
    return float(np.count_nonzero(y)) / y.size


def pf_error(predicted_labels, actual_labels) -> float:
    p = as_binary(predicted_labels)
    a = as_binary(actual_labels)
    if p.shape != a.shape:
        raise DataError(f"length mismatch: {p.size} predicted vs {a.size} actual")
    return abs(probability_of_failure(p) - probability_of_failure(a))


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    fraction: float
    split_seed: int


def split_train_test(dataset_or_n, fraction: float | None = None, split_seed: int = 0, count: int | None = None) -> SplitPlan:
    """Uniform random split without replacement.

    Give either ``fraction`` (train size ``round(fraction * N)``, halves up) or an
    absolute training ``count``.
    """
    n = dataset_or_n if isinstance(dataset_or_n, (int, np.integer)) else len(dataset_or_n)
    if (fraction is None) == (count is None):
        raise ValueError("give exactly one of fraction or count")
    if count is None:
        if not 0 < fraction < 1:
            raise ValueError("fraction must lie strictly between 0 and 1")
        n_train = int(math.floor(fraction * n + 0.5))
    else:
        n_train = int(count)
    if not 0 < n_train < n:
        raise ValueError(f"split of {n} records leaves an empty train or test set")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(split_seed))))
    perm = rng.permutation(n)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:])
    return SplitPlan(train, test, n_train / n, int(split_seed))


# --------------------------------------------------------------------------
# RFMC file format


def _record_dtype(n_cells: int) -> np.dtype:
    return np.dtype([("values", "<f8", (n_cells,)), ("mu", "<f8"), ("label", "u1")])


def dumps_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(dataset: Dataset) -> bytes:
    header = dict(dataset.header)
    header["n_cells"] = dataset.n_cells
    header["n_records"] = len(dataset)
    blob = dumps_header(header)
    recs = np.empty(len(dataset), dtype=_record_dtype(dataset.n_cells))
    recs["values"] = dataset.values
    recs["mu"] = dataset.mu
    recs["label"] = dataset.labels
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob + recs.tobytes()


def from_bytes(data: bytes) -> Dataset:
    if data[:4] != MAGIC:
        raise DataError("not an RFMC file (bad magic)")
    if len(data) < 12:
        raise DataError("truncated RFMC header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported RFMC version {version}")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt RFMC header: {exc}") from exc
    n_cells = int(header["n_cells"])
    n_rec = int(header["n_records"])
    dt = _record_dtype(n_cells)
    body = data[12 + hlen :]
    if len(body) != n_rec * dt.itemsize:
        raise DataError(f"RFMC body holds {len(body)} bytes, expected {n_rec * dt.itemsize}")
    recs = np.frombuffer(body, dtype=dt, count=n_rec)
    return Dataset(recs["values"].copy(), recs["mu"].copy(), recs["label"].copy(), header)


def save_dataset(dataset: Dataset, path) -> str:
    """Write an RFMC file; returns its sha256 hex digest."""
    data = to_bytes(dataset)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_dataset(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())


def export_csv(dataset: Dataset, path_or_buffer=None) -> str:
    """CSV mirror of the RFMC records: cell columns, mu_cu, label (0/1)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([f"cell_{i:04d}" for i in range(dataset.n_cells)] + ["mu_cu", "label"])
    for row, mu, lab in zip(dataset.values, dataset.mu, dataset.labels):
        w.writerow([repr(float(v)) for v in row] + [repr(float(mu)), int(lab)])
    text = buf.getvalue()
    if path_or_buffer is not None:
        if hasattr(path_or_buffer, "write"):
            path_or_buffer.write(text)
        else:
            Path(path_or_buffer).write_text(text, newline="")
    return text
