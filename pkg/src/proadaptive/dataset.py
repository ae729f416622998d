"""
Temporal datasets: simulated drift generator, CSV ingestion, cleaning and
signed feature hashing.

Datasets are stored column-wise (timestamps, labels, feature matrix) so the
downstream numerics can index them with integer arrays.  A label of ``-1``
marks a missing label; :func:`clean` removes such rows.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field, asdict
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

MISSING_LABEL = -1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_DATE_WINDOW = (dt.date(2019, 1, 1), dt.date(2025, 12, 31))


class SchemaError(ValueError):
    """Raised when a CSV file does not carry the columns a schema asks for."""


class Record(NamedTuple):
    timestamp: dt.date
    label: int
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class TemporalDataset:
    """Labelled records sorted by date.

    Attributes
    ----------
    timestamps : (n,) datetime64[D] array
    labels : (n,) int8 array, values in {0, 1} (``-1`` = missing, pre-clean only)
    features : (n, D) float64 array
    """

    timestamps: np.ndarray
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[D]")
        y = np.asarray(self.labels, dtype=np.int8)
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if not (len(ts) == len(y) == len(X)):
            raise ValueError("timestamps, labels and features differ in length")
        if len(ts) and np.any(ts[1:] < ts[:-1]):
            order = np.argsort(ts, kind="stable")
            ts, y, X = ts[order], y[order], X[order]
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if np.any((y != 0) & (y != 1) & (y != MISSING_LABEL)):
            raise ValueError("labels must be 0, 1 or missing (-1)")
        for arr in (ts, y, X):
            arr.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "features", X)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def date_range(self) -> tuple[dt.date, dt.date]:
        if self.n == 0:
            raise ValueError("empty dataset has no date range")
        return _to_date(self.timestamps[0]), _to_date(self.timestamps[-1])

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Record]:
        for i in range(self.n):
            yield self.record(i)

    def record(self, i: int) -> Record:
        return Record(_to_date(self.timestamps[i]), int(self.labels[i]), self.features[i])

    def take(self, idx) -> "TemporalDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return TemporalDataset(self.timestamps[idx], self.labels[idx], self.features[idx])

    def to_csv(self, path) -> None:
        """Write ``timestamp,label,x`` (D=1) or ``timestamp,label,f0..f{D-1}``."""
        names = ["x"] if self.feature_dim == 1 else [f"f{j}" for j in range(self.feature_dim)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "label", *names])
            for ts, y, x in zip(self.timestamps.astype(str), self.labels, self.features):
                w.writerow([ts, "" if y == MISSING_LABEL else int(y), *(repr(float(v)) for v in x)])

    @classmethod
    def from_csv(cls, path) -> "TemporalDataset":
        """Read a file written by :meth:`to_csv`."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["timestamp", "label"]:
            raise SchemaError(f"{path}: expected header starting with timestamp,label")
        body = rows[1:]
        ts = np.array([r[0] for r in body], dtype="datetime64[D]")
        y = np.array([MISSING_LABEL if r[1] == "" else int(r[1]) for r in body], dtype=np.int8)
        X = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
        if X.size == 0:
            X = X.reshape(len(body), len(rows[0]) - 2)
        return cls(ts, y, X)


def _to_date(d64) -> dt.date:
    return dt.date.fromisoformat(str(np.datetime64(d64, "D")))


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the two-Gaussian drifting generator.

    ``mu1_*`` drives the class-1 mean and ``mu2_*`` the class-0 mean; both move
    linearly over the quarters, as does the prior ``p(y=1)``.
    """

    years: int = 4
    quarters_per_year: int = 4
    samples_per_quarter: int = 2000
    mu1_start: float = -2.0
    mu1_end: float = 2.0
    mu2_start: float = 2.0
    mu2_end: float = -2.0
    sigma: float = 1.0
    prior_start: float = 0.4
    prior_end: float = 0.6
    seed: int = 0
    start_year: int = 2020

    def validate(self) -> None:
        if self.years < 1:
            raise ValueError("years: must be >= 1")
        if self.quarters_per_year != 4:
            raise ValueError("quarters_per_year: batching is quarterly, must be 4")
        if self.samples_per_quarter < 1:
            raise ValueError("samples_per_quarter: must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma: must be > 0")
        for name in ("prior_start", "prior_end"):
            p = getattr(self, name)
            if not 0 < p < 1:
                raise ValueError(f"{name}: must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed: must be a 64-bit unsigned integer")

    @property
    def n_quarters(self) -> int:
        return self.years * self.quarters_per_year

    def tau(self, q):
        Q = self.n_quarters
        return np.asarray(q, dtype=float) / (Q - 1) if Q > 1 else np.zeros_like(q, dtype=float)

    def class_means(self, tau):
        """Return (class-1 mean, class-0 mean) at normalised time ``tau``."""
        m1 = self.mu1_start + tau * (self.mu1_end - self.mu1_start)
        m0 = self.mu2_start + tau * (self.mu2_end - self.mu2_start)
        return m1, m0

    def prior(self, tau):
        return self.prior_start + tau * (self.prior_end - self.prior_start)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**d)


def quarter_bounds(year: int, quarter: int) -> tuple[dt.date, dt.date]:
    """First and last day of calendar quarter ``quarter`` (1-4) of ``year``."""
    start = dt.date(year, 3 * (quarter - 1) + 1, 1)
    end = dt.date(year + 1, 1, 1) if quarter == 4 else dt.date(year, 3 * quarter + 1, 1)
    return start, end - dt.timedelta(days=1)


def generate_simulated(config: SimConfig) -> TemporalDataset:
    """Draw the drifting two-class Gaussian dataset described by ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.samples_per_quarter
    ts_parts, y_parts, x_parts = [], [], []
    for q in range(config.n_quarters):
        tau = float(config.tau(q))
        m1, m0 = config.class_means(tau)
        first, last = quarter_bounds(config.start_year + q // 4, q % 4 + 1)
        span = (last - first).days + 1
        days = np.sort(rng.integers(0, span, size=n))
        y = (rng.random(n) < config.prior(tau)).astype(np.int8)
        x = np.where(y == 1, m1, m0) + config.sigma * rng.standard_normal(n)
        ts_parts.append(np.datetime64(first, "D") + days)
        y_parts.append(y)
        x_parts.append(x)
    return TemporalDataset(np.concatenate(ts_parts), np.concatenate(y_parts),
                           np.concatenate(x_parts)[:, None])


# ---------------------------------------------------------------------------
# feature hashing


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def hash_features(values: Mapping[str, str | None], dim: int) -> np.ndarray:
    """Signed hashing of ``column=value`` pairs into a ``dim``-vector.

    Each pair adds +1 or -1 at ``fnv1a_64 mod dim``; the sign is the top bit of
    the hash.  ``None`` and empty-string values contribute nothing.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    out = np.zeros(dim)
    for col, val in values.items():
        if val is None or val == "":
            continue
        h = fnv1a_64(f"{col}={val}".encode("utf-8"))
        out[h % dim] += -1.0 if h >> 63 else 1.0
    return out


# ---------------------------------------------------------------------------
# ingestion and cleaning


@dataclass(frozen=True)
class IngestSchema:
    date_column: str
    label_column: str
    categorical_columns: tuple[str, ...]
    positive_label_values: frozenset[str] = frozenset({"1"})
    date_format: str = "%Y-%m-%d"
    hash_dim: int = 100
    date_window: tuple[dt.date, dt.date] = DEFAULT_DATE_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        object.__setattr__(self, "positive_label_values", frozenset(self.positive_label_values))
        lo, hi = self.date_window
        if isinstance(lo, str):
            object.__setattr__(self, "date_window",
                               (dt.date.fromisoformat(lo), dt.date.fromisoformat(hi)))

    def validate(self) -> None:
        cols = [self.date_column, self.label_column, *self.categorical_columns]
        if any(not c for c in cols):
            raise ValueError("schema column names must be non-empty")
        if len(set(cols)) != len(cols):
            raise ValueError("schema columns must be distinct")
        if self.hash_dim < 1:
            raise ValueError("hash_dim: must be >= 1")
        if self.date_window[0] > self.date_window[1]:
            raise ValueError("date_window: start after end")

    @classmethod
    def from_dict(cls, d: Mapping) -> "IngestSchema":
        d = dict(d)
        if "date_window" in d:
            d["date_window"] = tuple(d["date_window"])
        return cls(**d)


@dataclass
class CleanStats:
    input_count: int = 0
    duplicate_count: int = 0
    missing_label_count: int = 0
    bad_date_count: int = 0
    output_count: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class IngestResult:
    dataset: TemporalDataset
    dropped_count: int
    dropped: dict[str, int] = field(default_factory=dict)


def ingest_csv(path: str | os.PathLike, schema: IngestSchema) -> IngestResult:
    """Read a raw CSV into a hashed :class:`TemporalDataset`.

    Rows whose date does not parse, falls outside ``schema.date_window``, or
    whose label cell is empty are dropped and counted.
    """
    schema.validate()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [schema.date_column, schema.label_column, *schema.categorical_columns]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        lo, hi = schema.date_window
        ts, ys, xs = [], [], []
        dropped = {"bad_date": 0, "missing_label": 0}
        for row in reader:
            try:
                day = dt.datetime.strptime(row[schema.date_column].strip(), schema.date_format).date()
            except (ValueError, AttributeError):
                dropped["bad_date"] += 1
                continue
            if not lo <= day <= hi:
                dropped["bad_date"] += 1
                continue
            raw = (row[schema.label_column] or "").strip()
            if raw == "" or raw.lower() == "nan":
                dropped["missing_label"] += 1
                continue
            ts.append(day)
            ys.append(1 if raw in schema.positive_label_values else 0)
            xs.append(hash_features({c: row[c] for c in schema.categorical_columns}, schema.hash_dim))
    X = np.array(xs).reshape(len(xs), schema.hash_dim)
    ds = TemporalDataset(np.array(ts, dtype="datetime64[D]"), np.array(ys, dtype=np.int8), X)
    return IngestResult(ds, sum(dropped.values()), dropped)


def clean(dataset: TemporalDataset,
          date_window: tuple[dt.date, dt.date] = DEFAULT_DATE_WINDOW) -> tuple[TemporalDataset, CleanStats]:
    """Drop exact duplicates (first kept), missing labels and out-of-window dates.

    Survivors keep their relative order.
    """
    stats = CleanStats(input_count=dataset.n)
    keep = np.ones(dataset.n, dtype=bool)
    seen = set()
    for i in range(dataset.n):
        key = (dataset.timestamps[i].tobytes(), int(dataset.labels[i]), dataset.features[i].tobytes())
        if key in seen:
            keep[i] = False
            stats.duplicate_count += 1
        else:
            seen.add(key)
    missing = keep & (dataset.labels == MISSING_LABEL)
    stats.missing_label_count = int(missing.sum())
    keep &= ~missing
    lo, hi = (np.datetime64(d, "D") for d in date_window)
    bad = keep & ((dataset.timestamps < lo) | (dataset.timestamps > hi))
    stats.bad_date_count = int(bad.sum())
    keep &= ~bad
    stats.output_count = int(keep.sum())
    if stats.output_count == 0:
        raise ValueError("no usable records")
    if keep.all():
        return dataset, stats
    return dataset.take(np.flatnonzero(keep)), stats


def load_config_file(path) -> dict:
    """Load a TOML or JSON config file into a dict."""
    path = os.fspath(path)
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def concat_records(records: Sequence[Record]) -> TemporalDataset:
    return TemporalDataset(np.array([r.timestamp for r in records], dtype="datetime64[D]"),
                           np.array([r.label for r in records], dtype=np.int8),
                           np.array([np.asarray(r.features, dtype=float) for r in records]))
