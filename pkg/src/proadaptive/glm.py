"""
Logistic regression trained by minibatch gradient descent with warm starts
across temporal batches, plus a seeded random hyperparameter search.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

P_CLAMP = 1e-12


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, dim: int) -> "ModelParams":
        return cls(np.zeros(dim), 0.0)

    @classmethod
    def from_vector(cls, v) -> "ModelParams":
        """Inverse of :meth:`as_vector`; the last entry is the bias."""
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:-1], v[-1])

    @property
    def dim(self) -> int:
        return len(self.weights)

    def as_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and math.isfinite(self.bias))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.as_vector(), other.as_vector())


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.1
    epochs_per_batch: int = 10
    minibatch_size: int = 64
    l2: float = 1e-4

    def validate(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate: must be >= 0")
        if self.epochs_per_batch < 1:
            raise ValueError("epochs_per_batch: must be >= 1")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size: must be >= 1")
        if not self.l2 >= 0:
            raise ValueError("l2: must be >= 0")


@dataclass(frozen=True)
class HyperSpace:
    """Ranges for random search; rates and penalties are sampled log-uniformly."""

    learning_rate: tuple[float, float] = (1e-2, 1.0)
    epochs_per_batch: tuple[int, int] = (5, 30)
    minibatch_size: tuple[int, int] = (16, 128)
    l2: tuple[float, float] = (1e-6, 1e-2)

    def sample(self, rng: np.random.Generator) -> HyperParams:
        def log_uniform(lo, hi):
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

        return HyperParams(
            learning_rate=log_uniform(*self.learning_rate),
            epochs_per_batch=int(rng.integers(self.epochs_per_batch[0], self.epochs_per_batch[1] + 1)),
            minibatch_size=int(rng.integers(self.minibatch_size[0], self.minibatch_size[1] + 1)),
            l2=log_uniform(*self.l2),
        )


@dataclass(frozen=True)
class TrainState:
    params: ModelParams
    batches_seen: int = 0
    rng_seed: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.rng_seed, spawn_key=(self.batches_seen,)))


def sigmoid(z):
    """Logistic function, split on sign so ``exp`` never overflows."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _check_dims(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != params.dim:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model dimension {params.dim}")
    return X


def decision_function(params: ModelParams, X) -> np.ndarray:
    X = _check_dims(params, X)
    return X @ params.weights + params.bias


def predict_proba(params: ModelParams, X) -> np.ndarray:
    return sigmoid(decision_function(params, X))


def loss_and_gradient(params: ModelParams, X, y, l2: float = 0.0) -> tuple[float, np.ndarray]:
    """Mean log-loss with ``l2/2 * |w|^2`` and its gradient.

    The gradient is returned as one vector ``[d/dw..., d/db]``.
    """
    X = _check_dims(params, X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) != len(X):
        raise ValueError(f"{len(X)} rows but {len(y)} labels")
    p = sigmoid(X @ params.weights + params.bias)
    pc = np.clip(p, P_CLAMP, 1 - P_CLAMP)
    w = params.weights
    loss = -np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)) + 0.5 * l2 * (w @ w)
    r = p - y
    grad = np.empty(params.dim + 1)
    grad[:-1] = X.T @ r / len(y) + l2 * w
    grad[-1] = r.mean()
    return float(loss), grad


def train_epochs(state: TrainState, X, y, hyper: HyperParams) -> TrainState:
    """Run ``hyper.epochs_per_batch`` shuffled minibatch passes from ``state``."""
    hyper.validate()
    X = _check_dims(state.params, X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("no records to train on")
    rng = state.rng()
    theta = state.params.as_vector().copy()
    n, bs = len(y), hyper.minibatch_size
    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(theta, X, y, hyper, rng, n, bs)
    return replace(state, params=ModelParams.from_vector(theta), batches_seen=state.batches_seen + 1)


def _run_epochs(theta, X, y, hyper, rng, n, bs) -> None:
    for _ in range(hyper.epochs_per_batch):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            mb = perm[start:start + bs]
            Xb, yb = X[mb], y[mb]
            w = theta[:-1]
            r = sigmoid(Xb @ w + theta[-1]) - yb
            theta[:-1] -= hyper.learning_rate * (Xb.T @ r / len(mb) + hyper.l2 * w)
            theta[-1] -= hyper.learning_rate * r.mean()
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"diverged: non-finite parameters with {hyper}")


def training_arrays(dataset, split, replica_id: int):
    """Features and labels of one bootstrap replica of a split batch."""
    idx = split.replica(replica_id).indices
    return dataset.features[idx], dataset.labels[idx]


def train_incremental(dataset, splits: Sequence, replica_id: int, hyper: HyperParams, seed: int,
                      state: TrainState | None = None) -> list[ModelParams]:
    """Warm-started training over consecutive split batches.

    Returns the parameter snapshot after each batch.  A ``None`` entry in
    ``splits`` (an unusable batch) carries the previous parameters forward.
    """
    if state is None:
        state = TrainState(ModelParams.zeros(dataset.feature_dim), 0, replica_seed(seed, replica_id))
    snapshots = []
    for sb in splits:
        if sb is not None:
            X, y = training_arrays(dataset, sb, replica_id)
            state = train_epochs(state, X, y, hyper)
        snapshots.append(state.params)
    return snapshots


def replica_seed(seed: int, replica_id: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0x7472, replica_id)).generate_state(1, np.uint64)[0])


@dataclass
class TuningResult:
    best: HyperParams
    best_auc: float
    trials: list[tuple[HyperParams, float | str]] = field(default_factory=list)


def tune_hyperparameters(dataset, splits: Sequence, k: int, space: HyperSpace = HyperSpace(),
                         budget: int = 20, seed: int = 0) -> TuningResult:
    """Random search scored by validation ROC-AUC on batch ``k``.

    Each trial trains replica 0 incrementally on ``splits[0..k]``.  The first
    trial with the highest AUC wins.
    """
    from .metrics_eval import roc_auc

    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not 0 <= k < len(splits) or splits[k] is None:
        raise ValueError(f"no usable split at batch {k}")
    rng = np.random.default_rng(seed)
    val = splits[k].validation
    Xv, yv = dataset.features[val], dataset.labels[val]
    trials = []
    best, best_auc = None, -np.inf
    for _ in range(budget):
        hp = space.sample(rng)
        try:
            params = train_incremental(dataset, splits[:k + 1], 0, hp, seed)[-1]
        except DivergenceError as exc:
            trials.append((hp, str(exc)))
            continue
        auc = roc_auc(decision_function(params, Xv), yv)
        trials.append((hp, auc))
        if auc > best_auc:
            best, best_auc = hp, auc
    if best is None:
        lines = "\n".join(f"  {hp}: {out}" for hp, out in trials)
        raise DivergenceError(f"all {budget} trials diverged:\n{lines}")
    return TuningResult(best, float(best_auc), trials)


def write_snapshots(snapshots: dict[int, list[ModelParams]], path) -> None:
    """CSV of ``replica_id,batch_index,param_index,value`` (bias is the last index)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica_id", "batch_index", "param_index", "value"])
        for r in sorted(snapshots):
            for b, params in enumerate(snapshots[r]):
                for j, v in enumerate(params.as_vector()):
                    w.writerow([r, b, j, repr(float(v))])


def read_snapshots(path) -> dict[int, list[ModelParams]]:
    table: dict[int, dict[int, dict[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            (table.setdefault(int(row["replica_id"]), {})
                  .setdefault(int(row["batch_index"]), {})[int(row["param_index"])]) = float(row["value"])
    out = {}
    for r, batches in table.items():
        if sorted(batches) != list(range(len(batches))):
            raise ValueError(f"replica {r}: batch indices are not consecutive from 0")
        out[r] = [ModelParams.from_vector([batches[b][j] for j in sorted(batches[b])]) for b in sorted(batches)]
    return out
