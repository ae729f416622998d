"""
End-to-end orchestration: config, seed derivation, stage functions and the
artifact manifest.

Every stage reads and writes plain CSV/JSON in one output directory; the
manifest records a SHA-256 of each file so later stages can refuse to run on
intermediates that were edited by hand.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (DEFAULT_DATE_WINDOW, IngestSchema, SimConfig, TemporalDataset, clean,
                      generate_simulated, ingest_csv, load_config_file)
from .forecast import DEFAULT_CANDIDATES, SplineSpec, forecast_grid, read_forecasts, write_forecasts
from .glm import HyperParams, HyperSpace, read_snapshots, train_incremental, tune_hyperparameters, write_snapshots
from .metrics_eval import EvaluationReport, ScenarioInputs, run_scenarios
from .partition import (StratificationError, batch_by_quarter, read_split_manifest, split_batch,
                        write_split_manifest)
from .shiftchar import (conditional_pdfs, distance_matrix, estimate_pdf, igt_project, prevalence_series,
                        shared_edges, write_distances, write_prevalence, write_projection)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class IntegrityError(RuntimeError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """64-bit sub-seed for a named stage; independent of execution order."""
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(label.encode()), index))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class PipelineConfig:
    source: str = "simulate"
    sim: SimConfig = field(default_factory=SimConfig)
    sim_seed_explicit: bool = False
    csv_path: str | None = None
    schema: IngestSchema | None = None
    date_window: tuple[dt.date, dt.date] = DEFAULT_DATE_WINDOW
    replicas: int = 100
    hyper_space: HyperSpace = field(default_factory=HyperSpace)
    budget: int = 20
    tune_batch: int = 0
    hyper: HyperParams | None = None
    retune_per_horizon: bool = False
    candidate_specs: tuple[SplineSpec, ...] = DEFAULT_CANDIDATES
    deltas: tuple[int, ...] = (2, 4)
    min_history: int = 2
    mean_trajectory: bool = False
    bins: int = 50
    igt_dims: int = 2
    characterize_feature: int | None = None  # None: first non-constant column
    out_dir: str = "out"
    seed: int = 0

    def validate(self) -> None:
        if self.source not in ("simulate", "csv"):
            raise ValueError("source: must be 'simulate' or 'csv'")
        if self.source == "simulate":
            self.sim.validate()
        else:
            if not self.csv_path or self.schema is None:
                raise ValueError("source 'csv' needs csv_path and schema")
            self.schema.validate()
        if self.replicas < 1:
            raise ValueError("replicas: must be >= 1")
        if self.budget < 1:
            raise ValueError("budget: must be >= 1")
        if any(d < 0 for d in self.deltas):
            raise ValueError("deltas: must be >= 0")
        if self.min_history < 2:
            raise ValueError("min_history: must be >= 2")
        if self.hyper is not None:
            self.hyper.validate()
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed: must be a 64-bit unsigned integer")

    def seeds(self) -> dict[str, int]:
        s = {name: derive_seed(self.seed, name) for name in ("split", "tune", "train")}
        s["simulate"] = self.sim.seed if self.sim_seed_explicit else derive_seed(self.seed, "simulate")
        return s

    def sim_config(self) -> SimConfig:
        return dataclasses.replace(self.sim, seed=self.seeds()["simulate"])

    def to_dict(self) -> dict:
        d = {
            "source": self.source,
            "sim": dataclasses.asdict(self.sim_config()),
            "csv_path": self.csv_path,
            "schema": None if self.schema is None else _jsonable(dataclasses.asdict(self.schema)),
            "date_window": [str(x) for x in self.date_window],
            "replicas": self.replicas,
            "hyper_space": dataclasses.asdict(self.hyper_space),
            "budget": self.budget,
            "tune_batch": self.tune_batch,
            "hyper": None if self.hyper is None else dataclasses.asdict(self.hyper),
            "retune_per_horizon": self.retune_per_horizon,
            "candidate_specs": [[s.degree, s.interior_knots] for s in self.candidate_specs],
            "deltas": list(self.deltas),
            "min_history": self.min_history,
            "mean_trajectory": self.mean_trajectory,
            "bins": self.bins,
            "igt_dims": self.igt_dims,
            "characterize_feature": self.characterize_feature,
            "seed": self.seed,
        }
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kw = {}
        if "sim" in d:
            sim = dict(d.pop("sim"))
            kw["sim_seed_explicit"] = "seed" in sim
            kw["sim"] = SimConfig.from_dict(sim)
        if d.get("schema") is not None:
            kw["schema"] = IngestSchema.from_dict(d.pop("schema"))
        else:
            d.pop("schema", None)
        if "date_window" in d:
            kw["date_window"] = tuple(dt.date.fromisoformat(str(x)) for x in d.pop("date_window"))
        if "hyper_space" in d:
            kw["hyper_space"] = HyperSpace(**{k: tuple(v) for k, v in d.pop("hyper_space").items()})
        if d.get("hyper") is not None:
            kw["hyper"] = HyperParams(**d.pop("hyper"))
        else:
            d.pop("hyper", None)
        if "candidate_specs" in d:
            kw["candidate_specs"] = tuple(SplineSpec(int(a), int(b)) for a, b in d.pop("candidate_specs"))
        if "deltas" in d:
            kw["deltas"] = tuple(int(x) for x in d.pop("deltas"))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw.update(d)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(load_config_file(path))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir, config: PipelineConfig):
        self.out = Path(out_dir)
        self.path = self.out / MANIFEST
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"files": {}}
        self.data.update({"config_hash": config.config_hash(), "tool_version": __version__,
                          "seeds": config.seeds()})

    def record(self, *names: str) -> None:
        for name in names:
            self.data["files"][name] = sha256_file(self.out / name)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def require(self, name: str, producer: str) -> Path:
        """Path of an intermediate, after checking it exists and is unmodified."""
        p = self.out / name
        if not p.exists() or name not in self.data["files"]:
            raise MissingArtifactError(f"{p} not found: run '{producer}' first")
        if sha256_file(p) != self.data["files"][name]:
            raise IntegrityError(f"intermediates modified: checksum of {name} does not match {MANIFEST}")
        return p


# ---------------------------------------------------------------------------
# stages


@dataclass
class TrainingArtifacts:
    dataset: TemporalDataset
    batches: list
    splits: list
    snapshots: dict
    hyper: HyperParams
    horizon_snapshots: dict | None = None
    flags: list = field(default_factory=list)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("simulate")
def stage_simulate(config: PipelineConfig) -> TemporalDataset:
    return generate_simulated(config.sim_config())


@_stage("ingest")
def stage_ingest(config: PipelineConfig) -> TemporalDataset:
    res = ingest_csv(config.csv_path, config.schema)
    log.info("ingested %d records, dropped %d (%s)", res.dataset.n, res.dropped_count, res.dropped)
    return res.dataset


@_stage("clean")
def stage_clean(dataset: TemporalDataset, config: PipelineConfig):
    return clean(dataset, config.date_window)


@_stage("split")
def stage_split(dataset: TemporalDataset, config: PipelineConfig):
    batches = batch_by_quarter(dataset)
    splits, flags = [], []
    seed = config.seeds()["split"]
    for b in batches:
        try:
            splits.append(split_batch(b, seed, config.replicas))
        except StratificationError as exc:
            splits.append(None)
            flags.append({"batch": b.index, "period_label": b.period_label, "reason": str(exc)})
    if all(s is None for s in splits):
        raise StratificationError("no batch could be split")
    return batches, splits, flags


@_stage("tune")
def stage_tune(dataset, splits, config: PipelineConfig, k: int | None = None):
    if config.hyper is not None:
        return config.hyper, None
    if k is None:
        k = config.tune_batch
    usable = [i for i, s in enumerate(splits) if s is not None and i >= k]
    if not usable:
        raise ValueError(f"no usable batch at or after {k} to tune on")
    res = tune_hyperparameters(dataset, splits, usable[0], config.hyper_space, config.budget,
                               derive_seed(config.seed, "tune", usable[0]))
    return res.best, res


@_stage("train")
def stage_train(dataset, splits, hyper: HyperParams, config: PipelineConfig) -> dict:
    seed = config.seeds()["train"]
    return {r: train_incremental(dataset, splits, r, hyper, seed) for r in range(config.replicas)}


def train_all(config: PipelineConfig, dataset: TemporalDataset) -> TrainingArtifacts:
    dataset, _ = stage_clean(dataset, config)
    batches, splits, flags = stage_split(dataset, config)
    hyper, _ = stage_tune(dataset, splits, config)
    snapshots = stage_train(dataset, splits, hyper, config)
    horizon_snapshots = None
    if config.retune_per_horizon:
        horizon_snapshots = {}
        for h in range(len(splits)):
            if splits[h] is None:
                continue
            hh, _ = stage_tune(dataset, splits[: h + 1], config, k=h)
            horizon_snapshots[h] = stage_train(dataset, splits[: h + 1], hh, config)
    return TrainingArtifacts(dataset, batches, splits, snapshots, hyper, horizon_snapshots, flags)


def scenario_inputs(art: TrainingArtifacts, config: PipelineConfig, forecasts=None) -> ScenarioInputs:
    return ScenarioInputs(art.dataset, art.splits, art.snapshots, dict(forecasts or {}),
                          config.candidate_specs, config.min_history, art.horizon_snapshots,
                          config.mean_trajectory)


def forecast_cells(n_batches: int, deltas, min_history: int):
    return [(d, t) for d in deltas for t in range(n_batches) if d >= 1 and t - d + 1 >= min_history]


@_stage("forecast")
def stage_forecast(art: TrainingArtifacts, config: PipelineConfig):
    inputs = scenario_inputs(art, config)
    cells = [(d, t) for d, t in forecast_cells(len(art.splits), config.deltas, config.min_history)
             if art.splits[t] is not None]
    return forecast_grid(inputs, cells)


@_stage("evaluate")
def stage_evaluate(art: TrainingArtifacts, config: PipelineConfig, forecasts: dict | None = None,
                   deltas=None) -> EvaluationReport:
    report = run_scenarios(scenario_inputs(art, config, forecasts), deltas or config.deltas)
    report.config = config.to_dict()
    report.seeds = config.seeds()
    report.config["hyperparams"] = dataclasses.asdict(art.hyper)
    report.config["batch_flags"] = art.flags
    return report


@dataclass
class Characterization:
    period_labels: list
    prevalence: np.ndarray
    marginal_distances: np.ndarray
    conditional_distances: np.ndarray
    marginal_projection: object
    conditional_projection: object


@_stage("characterize")
def stage_characterize(dataset: TemporalDataset, config: PipelineConfig) -> Characterization:
    dataset, _ = clean(dataset, config.date_window)
    batches = batch_by_quarter(dataset)
    j = config.characterize_feature
    if j is None:
        varying = np.flatnonzero(np.ptp(dataset.features, axis=0) > 0)
        if varying.size == 0:
            raise ValueError("every feature column is constant: nothing to characterize")
        j = int(varying[0])
    elif not 0 <= j < dataset.feature_dim:
        raise ValueError(f"characterize_feature {j} out of range for dimension {dataset.feature_dim}")
    values = [b.X[:, j] for b in batches]
    labels = [b.y for b in batches]
    edges = shared_edges(values, config.bins)
    marg = distance_matrix(estimate_pdf(values, edges=edges))
    cond = distance_matrix(conditional_pdfs(values, labels, edges=edges))
    dims = min(config.igt_dims, max(2, len(batches) - 1))
    return Characterization([b.period_label for b in batches], prevalence_series(batches), marg, cond,
                            igt_project(marg, dims) if len(batches) > dims else None,
                            igt_project(cond, dims) if len(batches) > dims else None)


# ---------------------------------------------------------------------------
# file-level commands


DATASET = "dataset.csv"
SPLITS = "splits.csv"
PARAMS = "params_trajectory.csv"
HYPER = "hyperparams.json"
FORECAST = "forecast.csv"
METRICS = "metrics.csv"
REPORT = "report.json"


def _load_dataset(config, manifest: Manifest) -> TemporalDataset:
    return TemporalDataset.from_csv(manifest.require(DATASET, "simulate' or 'ingest"))


def cmd_simulate(config: PipelineConfig) -> Path:
    config.validate()
    out = Path(config.out_dir)
    ensure_writable(out)
    man = Manifest(out, config)
    stage_simulate(config).to_csv(out / DATASET)
    man.record(DATASET)
    return out / DATASET


def cmd_ingest(config: PipelineConfig) -> Path:
    config.validate()
    if config.source != "csv":
        raise ValueError("source: ingest needs source = 'csv'")
    out = Path(config.out_dir)
    ensure_writable(out)
    man = Manifest(out, config)
    res = ingest_csv(config.csv_path, config.schema)
    _, stats = clean(res.dataset, config.date_window)
    res.dataset.to_csv(out / DATASET)
    info = json.loads(stats.to_json())
    info["ingest_dropped"] = res.dropped
    (out / "clean_stats.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    man.record(DATASET, "clean_stats.json")
    return out / DATASET


def _write_training(art: TrainingArtifacts, out: Path, man: Manifest, tuning=None) -> None:
    write_split_manifest([s for s in art.splits if s is not None], out / SPLITS)
    write_snapshots(art.snapshots, out / PARAMS)
    hp = {"hyperparams": dataclasses.asdict(art.hyper), "batch_flags": art.flags,
          "n_batches": len(art.splits), "period_labels": [b.period_label for b in art.batches]}
    (out / HYPER).write_text(json.dumps(hp, indent=2, sort_keys=True) + "\n")
    man.record(SPLITS, PARAMS, HYPER)


def cmd_train(config: PipelineConfig) -> TrainingArtifacts:
    config.validate()
    if config.retune_per_horizon:
        raise ValueError("retune_per_horizon: only supported by 'run'")
    out = Path(config.out_dir)
    man = Manifest(out, config)
    art = train_all(config, _load_dataset(config, man))
    _write_training(art, out, man)
    return art


def _load_training(config: PipelineConfig, man: Manifest) -> TrainingArtifacts:
    dataset = _load_dataset(config, man)
    dataset, _ = clean(dataset, config.date_window)
    hp = json.loads(man.require(HYPER, "train").read_text())
    by_index = {s.batch_index: s for s in read_split_manifest(man.require(SPLITS, "train"))}
    splits = [by_index.get(i) for i in range(hp["n_batches"])]
    snapshots = read_snapshots(man.require(PARAMS, "train"))
    batches = batch_by_quarter(dataset)
    return TrainingArtifacts(dataset, batches, splits, snapshots, HyperParams(**hp["hyperparams"]),
                             None, hp["batch_flags"])


def cmd_forecast(config: PipelineConfig):
    config.validate()
    out = Path(config.out_dir)
    man = Manifest(out, config)
    art = _load_training(config, man)
    results = stage_forecast(art, config)
    write_forecasts(results, out / FORECAST)
    man.record(FORECAST)
    return results


def cmd_evaluate(config: PipelineConfig, deltas=None) -> EvaluationReport:
    config.validate()
    out = Path(config.out_dir)
    man = Manifest(out, config)
    art = _load_training(config, man)
    fmap = read_forecasts(man.require(FORECAST, "forecast"))
    report = stage_evaluate(art, config, fmap, deltas)
    _write_report(report, out, man)
    return report


def _write_report(report: EvaluationReport, out: Path, man: Manifest) -> None:
    report.to_csv(out / METRICS)
    (out / REPORT).write_text(report.to_json() + "\n")
    man.record(METRICS, REPORT)


def cmd_characterize(config: PipelineConfig) -> Characterization:
    config.validate()
    out = Path(config.out_dir)
    man = Manifest(out, config)
    ch = stage_characterize(_load_dataset(config, man), config)
    _write_characterization(ch, out, man)
    return ch


def _write_characterization(ch: Characterization, out: Path, man: Manifest) -> None:
    write_prevalence(ch.prevalence, out / "prevalence.csv")
    write_distances(ch.conditional_distances, out / "distances.csv")
    write_distances(ch.marginal_distances, out / "distances_marginal.csv")
    names = ["prevalence.csv", "distances.csv", "distances_marginal.csv"]
    if ch.conditional_projection is not None:
        write_projection(ch.conditional_projection, ch.period_labels, out / "igt_projection.csv")
        write_projection(ch.marginal_projection, ch.period_labels, out / "igt_projection_marginal.csv")
        names += ["igt_projection.csv", "igt_projection_marginal.csv"]
    man.record(*names)


@dataclass
class RunResult:
    training: TrainingArtifacts
    forecasts: list
    report: EvaluationReport
    characterization: Characterization


def cmd_run(config: PipelineConfig) -> RunResult:
    """Simulate or ingest, then train, forecast, evaluate and characterize."""
    config.validate()
    out = Path(config.out_dir)
    ensure_writable(out)
    man = Manifest(out, config)
    raw = stage_simulate(config) if config.source == "simulate" else stage_ingest(config)
    raw.to_csv(out / DATASET)
    man.record(DATASET)
    art = train_all(config, raw)
    _write_training(art, out, man)
    forecasts = stage_forecast(art, config)
    write_forecasts(forecasts, out / FORECAST)
    man.record(FORECAST)
    fmap = {(d, res.target_time, res.replica_id): res.params for d, res in forecasts}
    report = stage_evaluate(art, config, fmap)
    _write_report(report, out, man)
    ch = stage_characterize(raw, config)
    _write_characterization(ch, out, man)
    return RunResult(art, forecasts, report, ch)


def summarize(report_path) -> str:
    """Plain-text table of mean AUC per scenario and test batch."""
    data = json.loads(Path(report_path).read_text())
    lines = []
    for delta in sorted({r["delta"] for r in data["rows"]}):
        lines.append(f"delta = {delta}")
        lines.append(f"{'t':>4} {'baseline':>10} {'pro_adapt':>10} {'upper':>10}")
        cells = {}
        for r in data["rows"]:
            if r["delta"] == delta and r["metric"] == "roc_auc":
                cells.setdefault(r["test_batch"], {})[r["scenario"]] = r["mean"]
        for t in sorted(cells):
            c = cells[t]
            fmt = lambda s: f"{c[s]:10.4f}" if s in c else f"{'-':>10}"
            lines.append(f"{t:>4} {fmt('baseline')} {fmt('pro_adaptive')} {fmt('upper_bound')}")
    return "\n".join(lines)


def ensure_writable(path) -> None:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory {p} is not writable")
