import numpy as np
import pytest

from proadaptive.dataset import SimConfig, TemporalDataset, generate_simulated
from proadaptive.partition import (StratificationError, batch_by_quarter, bootstrap_replicas, read_split_manifest,
                                   split_batch, write_split_manifest, _allocate)


def dataset_from(days, labels, start="2020-01-01"):
    ts = np.datetime64(start) + np.asarray(days)
    return TemporalDataset(ts, np.asarray(labels), np.arange(len(labels), dtype=float))


def test_single_quarter():
    ds = dataset_from([0, 10, 40, 80], [0, 1, 0, 1])
    batches = batch_by_quarter(ds)
    assert len(batches) == 1 and batches[0].period_label == "2020-Q1"


def test_quarter_boundary():
    ts = np.array(["2020-03-31", "2020-04-01"], dtype="datetime64[D]")
    ds = TemporalDataset(ts, np.array([0, 1]), np.zeros(2))
    b = batch_by_quarter(ds)
    assert [x.period_label for x in b] == ["2020-Q1", "2020-Q2"]
    assert list(b[0].indices) == [0] and list(b[1].indices) == [1]


def test_empty_quarters_kept():
    ts = np.array(["2020-01-05", "2020-10-01"], dtype="datetime64[D]")
    b = batch_by_quarter(TemporalDataset(ts, np.array([0, 1]), np.zeros(2)))
    assert [x.period_label for x in b] == ["2020-Q1", "2020-Q2", "2020-Q3", "2020-Q4"]
    assert [x.empty for x in b] == [False, True, True, False]


def test_simulated_has_16_batches():
    ds = generate_simulated(SimConfig(samples_per_quarter=20, seed=1))
    b = batch_by_quarter(ds)
    assert len(b) == 16 and all(len(x) == 20 for x in b)
    assert b[0].period_label == "2020-Q1" and b[-1].period_label == "2023-Q4"


def allocation_oracle(counts, fraction):
    # brute force: enumerate every per-class allocation summing to the rounded total and pick
    # the one closest (max abs deviation, then sum) to the exact quotas, favouring lower class labels
    total = int(np.floor(fraction * sum(counts) + 0.5))
    best = None
    for a in range(counts[0] + 1):
        b = total - a
        if not 0 <= b <= counts[1]:
            continue
        dev = (max(abs(a - fraction * counts[0]), abs(b - fraction * counts[1])), -a)
        if best is None or dev < best[0]:
            best = (dev, (a, b))
    return best[1]


@pytest.mark.parametrize("counts", [(50, 50), (30, 70), (13, 41), (1, 99), (7, 3), (33, 34)])
def test_allocation_matches_oracle(counts):
    for frac in (0.2, 0.3):
        assert tuple(_allocate(np.array(counts), frac)) == allocation_oracle(counts, frac)


def balanced_batch(n0=50, n1=50):
    labels = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    ds = dataset_from(np.arange(n0 + n1) % 80, labels)
    return batch_by_quarter(ds)[0]


def test_split_sizes_50_50():
    sb = split_batch(balanced_batch(), seed=1, b_replicas=100)
    y = balanced_batch().dataset.labels
    assert len(sb.test) == 20 and (y[sb.test] == 1).sum() == 10
    assert len(sb.validation) == 24 and (y[sb.validation] == 1).sum() == 12
    assert len(sb.pure_train) == 56 and (y[sb.pure_train] == 1).sum() == 28
    assert len(sb.replicas) == 100 and all(len(r.indices) == 56 for r in sb.replicas)


def test_split_disjoint_and_deterministic():
    b = balanced_batch(37, 63)
    a1 = split_batch(b, 5, 10)
    a2 = split_batch(b, 5, 10)
    assert np.array_equal(a1.test, a2.test) and np.array_equal(a1.validation, a2.validation)
    assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a1.replicas, a2.replicas))
    assert not set(a1.test) & (set(a1.validation) | set(a1.pure_train))
    assert not set(a1.validation) & set(a1.pure_train)
    assert set(a1.test) | set(a1.validation) | set(a1.pure_train) == set(b.indices)
    for rep in a1.replicas:
        assert not set(rep.indices) & set(a1.test)
        assert set(rep.indices) <= set(a1.pure_train)


def test_split_errors():
    with pytest.raises(StratificationError, match="cannot stratify"):
        split_batch(balanced_batch(20, 0), 0, 1)
    with pytest.raises(StratificationError):
        split_batch(balanced_batch(4, 4), 0, 1)


def test_bootstrap_exact_class_counts():
    idx = np.arange(100)
    labels = np.r_[np.zeros(30, int), np.ones(70, int)]
    (rep,) = bootstrap_replicas(idx, labels, 1, seed=2)
    assert (rep.indices < 30).sum() == 30 and (rep.indices >= 30).sum() == 70


def test_bootstrap_distinct_fraction():
    n = 200
    idx = np.arange(n)
    labels = np.r_[np.zeros(80, int), np.ones(120, int)]
    reps = bootstrap_replicas(idx, labels, 500, seed=3)
    frac = np.mean([len(np.unique(r.indices)) / n for r in reps])
    # Monte-Carlo oracle: independent uniform draws, per stratum, numpy's legacy RandomState
    rs = np.random.RandomState(0)
    oracle = np.mean([(len(np.unique(rs.randint(0, 80, 80))) + len(np.unique(rs.randint(0, 120, 120)))) / n
                      for _ in range(500)])
    assert abs(frac - (1 - np.exp(-1))) < 0.02
    assert abs(frac - oracle) < 0.02


def test_bootstrap_vacuous_and_errors():
    assert bootstrap_replicas(np.arange(4), np.array([0, 1, 0, 1]), 0, 0) == []
    with pytest.raises(StratificationError):
        bootstrap_replicas(np.arange(3), np.array([0, 0, 0]), 2, 0)


def test_replicas_independent_of_generation_order():
    idx = np.arange(60)
    labels = np.r_[np.zeros(20, int), np.ones(40, int)]
    all10 = bootstrap_replicas(idx, labels, 10, seed=9)
    first3 = bootstrap_replicas(idx, labels, 3, seed=9)
    for a, b in zip(all10, first3):
        assert np.array_equal(a.indices, b.indices)


def test_split_manifest_roundtrip(tmp_path):
    sb = split_batch(balanced_batch(), seed=1, b_replicas=3)
    write_split_manifest([sb], tmp_path / "s.csv")
    (back,) = read_split_manifest(tmp_path / "s.csv")
    assert np.array_equal(back.test, sb.test)
    assert np.array_equal(back.pure_train, sb.pure_train)
    for a, b in zip(back.replicas, sb.replicas):
        assert np.array_equal(a.indices, b.indices)
