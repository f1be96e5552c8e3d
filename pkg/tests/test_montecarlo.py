import hashlib
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfslope import montecarlo as mc
from rfslope.montecarlo import CampaignSpec, DataError


@pytest.fixture(scope="module")
def small():
    spec = CampaignSpec(mu_list=(18.6, 26.0), cov=0.3, delta_h=6.0, delta_v=1.0, n_per_mu=6, seed=42)
    return spec, mc.run_campaign(spec)


def test_deterministic_anchor_record():
    ds = mc.run_campaign(CampaignSpec(mu_list=(18.6,), cov=0.0, n_per_mu=1, seed=0))
    assert len(ds) == 1
    assert ds.labels[0] == mc.STABLE
    assert ds.fos[0] == pytest.approx(1.0, abs=1e-12)


def test_half_anchor_record_fails():
    ds = mc.run_campaign(CampaignSpec(mu_list=(9.3,), cov=0.0, n_per_mu=1, seed=0))
    assert ds.labels[0] == mc.FAILED
    assert ds.fos[0] == pytest.approx(0.5, abs=1e-12)


def test_record_count_and_order(small):
    spec, ds = small
    assert len(ds) == spec.n_records == 12
    assert np.array_equal(ds.mu, np.repeat([18.6, 26.0], 6))
    assert ds.header["label"] == "U_{0.3,6}"
    assert ds.n_cells == 800


def test_workers_do_not_change_bytes(small):
    spec, ds = small
    par = mc.run_campaign(spec, workers=3, chunk_size=2)
    assert mc.to_bytes(par) == mc.to_bytes(ds)


def test_labels_rederivable(small):
    _, ds = small
    assert np.array_equal(mc.relabel(ds), ds.labels)


def test_label_string(small):
    spec, _ = small
    assert spec.label == "U_{0.3,6}"
    assert CampaignSpec(cov=0.5, delta_h=25.0).label == "U_{0.5,25}"


def test_spec_validation():
    with pytest.raises(ValueError):
        CampaignSpec(n_per_mu=0)
    with pytest.raises(ValueError):
        CampaignSpec(seed=-1)
    with pytest.raises(ValueError):
        CampaignSpec(mu_list=())


def test_probability_of_failure():
    assert mc.probability_of_failure([0, 0, 0]) == 0.0
    assert mc.probability_of_failure(["failed", "stable", "failed", "stable"]) == 0.5
    assert mc.probability_of_failure(np.r_[np.ones(1609), np.zeros(9500 - 1609)]) == pytest.approx(0.16937, abs=5e-6)
    with pytest.raises(DataError):
        mc.probability_of_failure([])
    with pytest.raises(DataError):
        mc.probability_of_failure(["broken"])


def test_pf_error():
    a = np.r_[np.ones(200), np.zeros(800)]
    assert mc.pf_error(a, a) == 0.0
    assert mc.pf_error(np.zeros(1000), a) == pytest.approx(0.2)
    # entire-data RF block: 33837 predicted failures vs 34697 actual of 119500
    pred = np.r_[np.ones(33837), np.zeros(119500 - 33837)]
    act = np.r_[np.ones(34697), np.zeros(119500 - 34697)]
    assert mc.pf_error(pred, act) == pytest.approx(860 / 119500, rel=1e-12)
    assert round(mc.pf_error(pred, act), 4) == 0.0072
    with pytest.raises(DataError):
        mc.pf_error([0, 1], [0])


def test_split_sizes():
    p = mc.split_train_test(10_000, 0.05, split_seed=1)
    assert (p.train_indices.size, p.test_indices.size) == (500, 9500)
    p = mc.split_train_test(120_000, count=500)
    assert p.test_indices.size == 119_500
    p = mc.split_train_test(4, 0.5)
    assert p.train_indices.size == 2 and not set(p.train_indices) & set(p.test_indices)
    with pytest.raises(ValueError):
        mc.split_train_test(10, 0.01)
    with pytest.raises(ValueError):
        mc.split_train_test(10, 1.0)


@given(st.integers(2, 2000), st.floats(0.01, 0.99), st.integers(0, 2**63))
def test_split_partition_law(n, frac, seed):
    n_train = math.floor(frac * n + 0.5)
    if not 0 < n_train < n:
        with pytest.raises(ValueError):
            mc.split_train_test(n, frac, seed)
        return
    p = mc.split_train_test(n, frac, seed)
    both = np.concatenate([p.train_indices, p.test_indices])
    assert np.array_equal(np.sort(both), np.arange(n))
    assert p.train_indices.size == n_train
    q = mc.split_train_test(n, frac, seed)
    assert np.array_equal(p.train_indices, q.train_indices)


def test_rfmc_roundtrip(small, tmp_path):
    _, ds = small
    sha = mc.save_dataset(ds, tmp_path / "a.rfmc")
    raw = (tmp_path / "a.rfmc").read_bytes()
    assert sha == hashlib.sha256(raw).hexdigest()
    assert raw[:4] == b"RFMC"
    version, hlen = struct.unpack("<II", raw[4:12])
    assert version == 1
    n = ds.n_cells
    assert len(raw) == 12 + hlen + len(ds) * (8 * n + 8 + 1)
    # first record starts with the first cell value as little-endian f8
    assert struct.unpack("<d", raw[12 + hlen : 20 + hlen])[0] == ds.values[0, 0]
    back = mc.load_dataset(tmp_path / "a.rfmc")
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.mu, ds.mu)
    assert back.header["search_spec"] == ds.header["search_spec"]
    assert mc.to_bytes(back) == raw


def test_rfmc_corruption(small):
    _, ds = small
    raw = mc.to_bytes(ds)
    with pytest.raises(DataError):
        mc.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        mc.from_bytes(raw[:-1])
    with pytest.raises(DataError):
        mc.from_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])


def test_csv_export(small):
    _, ds = small
    text = mc.export_csv(ds)
    lines = text.split("\r\n")
    assert lines[0].startswith("cell_0000,") and lines[0].endswith(",mu_cu,label")
    first = lines[1].split(",")
    assert float(first[0]) == ds.values[0, 0]
    assert int(first[-1]) == ds.labels[0]
    assert len([ln for ln in lines if ln]) == len(ds) + 1


def test_dataset_subset(small):
    _, ds = small
    sub = ds.subset([0, 3])
    assert len(sub) == 2 and np.array_equal(sub.values[1], ds.values[3])


def test_pf_non_increasing_in_mean():
    spec = CampaignSpec(mu_list=(18.6, 22.3, 26.0), cov=0.5, delta_h=6.0, delta_v=1.0, n_per_mu=150, seed=3)
    ds = mc.run_campaign(spec)
    pf = [ds.labels[ds.mu == m].mean() for m in spec.mu_list]
    for a, b in zip(pf, pf[1:]):
        band = 2 * math.sqrt(max(a * (1 - a), 1e-12) / spec.n_per_mu)
        assert b <= a + band
