"""
Quarterly batching, stratified train/validation/test splits and
stratified bootstrap replicas.

All memberships are stored as integer indices into the parent dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import TemporalDataset, quarter_bounds

TEST_FRACTION = 0.2
VALIDATION_FRACTION = 0.3
MIN_BATCH_SIZE = 10


class StratificationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TemporalBatch:
    index: int
    period_label: str
    indices: np.ndarray
    dataset: TemporalDataset = field(repr=False)

    @property
    def empty(self) -> bool:
        return len(self.indices) == 0

    @property
    def X(self) -> np.ndarray:
        return self.dataset.features[self.indices]

    @property
    def y(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class Replica:
    replica_id: int
    indices: np.ndarray


@dataclass(frozen=True, eq=False)
class SplitBatch:
    batch_index: int
    test: np.ndarray
    validation: np.ndarray
    pure_train: np.ndarray
    replicas: list[Replica]

    def replica(self, replica_id: int) -> Replica:
        if not 0 <= replica_id < len(self.replicas):
            raise KeyError(f"batch {self.batch_index} has no replica {replica_id}")
        rep = self.replicas[replica_id]
        assert rep.replica_id == replica_id
        return rep


def _quarter_number(ts: np.ndarray) -> np.ndarray:
    months = ts.astype("datetime64[M]").astype(np.int64)  # months since 1970-01
    return months // 3


def batch_by_quarter(dataset: TemporalDataset) -> list[TemporalBatch]:
    """Split a dataset into consecutive calendar quarters.

    Quarters between the first and last record that hold no records are kept
    as empty batches (check :attr:`TemporalBatch.empty`).
    """
    if dataset.n == 0:
        raise ValueError("cannot batch an empty dataset")
    qnum = _quarter_number(dataset.timestamps)
    first, last = int(qnum.min()), int(qnum.max())
    order = np.argsort(qnum, kind="stable")
    bounds = np.searchsorted(qnum[order], np.arange(first, last + 2))
    batches = []
    for b, q in enumerate(range(first, last + 1)):
        year, quarter = 1970 + q // 4, q % 4 + 1
        idx = np.sort(order[bounds[b]:bounds[b + 1]])
        batches.append(TemporalBatch(b, f"{year}-Q{quarter}", idx, dataset))
    return batches


def period_dates(period_label: str):
    year, q = period_label.split("-Q")
    return quarter_bounds(int(year), int(q))


def _allocate(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Per-class share of ``fraction * total`` by largest remainder.

    The total is rounded half-up; leftover units go to the classes with the
    largest fractional quota (lower class label first on ties).
    """
    total = int(np.floor(fraction * counts.sum() + 0.5))
    quota = fraction * counts
    alloc = np.floor(quota).astype(int)
    rem = quota - alloc
    for c in sorted(range(len(counts)), key=lambda c: (-rem[c], c))[: total - alloc.sum()]:
        alloc[c] += 1
    return np.minimum(alloc, counts)


def replica_rng(seed: int, replica_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica_id,)))


def bootstrap_replicas(pure_train: np.ndarray, labels: np.ndarray, B: int, seed: int) -> list[Replica]:
    """Draw ``B`` with-replacement resamples of ``pure_train`` within each class.

    Parameters
    ----------
    pure_train : index array into the dataset
    labels : labels aligned with ``pure_train``
    """
    pure_train = np.asarray(pure_train)
    labels = np.asarray(labels)
    strata = [pure_train[labels == c] for c in (0, 1)]
    if B > 0 and any(len(s) == 0 for s in strata):
        raise StratificationError("empty class stratum in pure-train set")
    replicas = []
    for r in range(B):
        rng = replica_rng(seed, r)
        draws = [s[rng.integers(0, len(s), size=len(s))] for s in strata]
        replicas.append(Replica(r, np.sort(np.concatenate(draws))))
    return replicas


def split_batch(batch: TemporalBatch, seed: int, b_replicas: int) -> SplitBatch:
    """Stratified 80/20 train-test split, 70/30 pure-train/validation split of
    the training part, then ``b_replicas`` stratified bootstrap replicas."""
    if len(batch) < MIN_BATCH_SIZE:
        raise StratificationError(
            f"batch {batch.period_label} has {len(batch)} records, need >= {MIN_BATCH_SIZE}")
    y = batch.y
    counts = np.array([(y == 0).sum(), (y == 1).sum()])
    if counts.min() == 0:
        raise StratificationError(f"cannot stratify batch {batch.period_label}: single class")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 + batch.index,)))
    shuffled = [rng.permutation(batch.indices[y == c]) for c in (0, 1)]
    n_test = _allocate(counts, TEST_FRACTION)
    rest_counts = counts - n_test
    n_val = _allocate(rest_counts, VALIDATION_FRACTION)
    test, val, pure = [], [], []
    for c in (0, 1):
        s = shuffled[c]
        test.append(s[: n_test[c]])
        val.append(s[n_test[c]: n_test[c] + n_val[c]])
        pure.append(s[n_test[c] + n_val[c]:])
    if any(len(p) == 0 for p in pure):
        raise StratificationError(f"cannot stratify batch {batch.period_label}: class missing from pure-train")
    pure_train = np.sort(np.concatenate(pure))
    replicas = bootstrap_replicas(pure_train, batch.dataset.labels[pure_train], b_replicas,
                                  seed=_replica_seed(seed, batch.index))
    return SplitBatch(batch.index, np.sort(np.concatenate(test)), np.sort(np.concatenate(val)),
                      pure_train, replicas)


def _replica_seed(seed: int, batch_index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(batch_index,)).generate_state(1, np.uint64)[0])


def write_split_manifest(splits: list[SplitBatch], path) -> None:
    """CSV of ``record_id,batch,role,replica_id``; replica rows repeat per draw."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "batch", "role", "replica_id"])
        for sb in splits:
            for role, idx in (("test", sb.test), ("validation", sb.validation), ("pure_train", sb.pure_train)):
                for i in idx:
                    w.writerow([int(i), sb.batch_index, role, ""])
            for rep in sb.replicas:
                for i in rep.indices:
                    w.writerow([int(i), sb.batch_index, "replica", rep.replica_id])


def read_split_manifest(path) -> list[SplitBatch]:
    roles: dict[int, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            b = roles.setdefault(int(row["batch"]), {"test": [], "validation": [], "pure_train": [], "replica": {}})
            if row["role"] == "replica":
                b["replica"].setdefault(int(row["replica_id"]), []).append(int(row["record_id"]))
            else:
                b[row["role"]].append(int(row["record_id"]))
    out = []
    for bi in sorted(roles):
        r = roles[bi]
        reps = [Replica(k, np.array(r["replica"][k], dtype=np.intp)) for k in sorted(r["replica"])]
        out.append(SplitBatch(bi, np.array(r["test"], dtype=np.intp), np.array(r["validation"], dtype=np.intp),
                              np.array(r["pure_train"], dtype=np.intp), reps))
    return out
