"""
Classification metrics, percentile bootstrap intervals and the
baseline / pro-adaptive / upper-bound comparison.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .glm import ModelParams, decision_function, predict_proba

SCENARIOS = ("baseline", "pro_adaptive", "upper_bound")
METRICS = ("roc_auc", "recall_pos", "macro_f1")
THRESHOLD = 0.5


def _both_classes(labels: np.ndarray, what: str) -> None:
    if labels.size == 0 or labels.min() == labels.max():
        raise ValueError(f"{what} undefined: labels hold a single class")


def roc_auc(scores, labels) -> float:
    """ROC-AUC as the normalised Mann-Whitney U statistic (midranks for ties)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    _both_classes(y, "AUC")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0  # class neither present nor predicted
    return 2 * tp / denom


def recall_and_macro_f1(probabilities, labels, threshold: float = THRESHOLD) -> tuple[float, float]:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in length")
    _both_classes(y, "recall / F1")
    pred = (p >= threshold).astype(int)
    f1s = []
    for c in (0, 1):
        tp = int(np.sum((pred == c) & (y == c)))
        fp = int(np.sum((pred == c) & (y != c)))
        fn = int(np.sum((pred != c) & (y == c)))
        f1s.append(_f1(tp, fp, fn))
    recall = np.sum((pred == 1) & (y == 1)) / np.sum(y == 1)
    return float(recall), float(np.mean(f1s))


def aggregate_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Mean and percentile interval (linear interpolation between order statistics).

    The interval is widened to contain the mean when extreme skew would
    otherwise leave it outside.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least 2 values for an interval")
    alpha = (1 - level) / 2 * 100
    lo, hi = np.percentile(v, [alpha, 100 - alpha])
    m = float(v.mean())
    return m, float(min(lo, m)), float(max(hi, m))


def score_model(params: ModelParams, X, y) -> dict[str, float]:
    """All three metrics of one model on one labelled set.

    AUC is ranked on the logit, which orders exactly like the probability but
    does not saturate to ties.
    """
    auc = roc_auc(decision_function(params, X), y)
    recall, f1 = recall_and_macro_f1(predict_proba(params, X), y)
    return {"roc_auc": auc, "recall_pos": recall, "macro_f1": f1}


@dataclass
class MetricRecord:
    scenario: str
    delta: int
    test_batch: int
    replica_id: int
    roc_auc: float
    recall_pos: float
    macro_f1: float


@dataclass
class ScenarioInputs:
    """What the comparison needs from training.

    ``snapshots`` maps replica id to its per-batch parameters.  When
    hyperparameters are re-tuned per horizon, ``horizon_snapshots[h]`` holds
    the run whose data end at batch ``h`` and takes precedence.
    ``forecasts`` maps ``(delta, t, replica)`` to forecast parameters; missing
    entries are computed on demand.
    """

    dataset: object
    splits: Sequence
    snapshots: Mapping[int, Sequence[ModelParams]]
    forecasts: dict = field(default_factory=dict)
    candidate_specs: Sequence = ()
    min_history: int = 2
    horizon_snapshots: Mapping[int, Mapping[int, Sequence[ModelParams]]] | None = None
    mean_trajectory: bool = False

    def run_for(self, h: int):
        if self.horizon_snapshots is not None and h in self.horizon_snapshots:
            return self.horizon_snapshots[h]
        return self.snapshots


@dataclass
class EvaluationReport:
    rows: list[dict]
    skipped: list[dict]
    records: list[MetricRecord] = field(repr=False)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def cell(self, scenario: str, delta: int, t: int, metric: str = "roc_auc") -> dict | None:
        for r in self.rows:
            if (r["scenario"], r["delta"], r["test_batch"], r["metric"]) == (scenario, delta, t, metric):
                return r
        return None

    def mean_series(self, scenario: str, delta: int, metric: str = "roc_auc") -> dict[int, float]:
        return {r["test_batch"]: r["mean"] for r in self.rows
                if r["scenario"] == scenario and r["delta"] == delta and r["metric"] == metric}

    def to_csv(self, path) -> None:
        cells = [(r["scenario"], r["delta"], r["test_batch"], r["metric"],
                  repr(r["mean"]), repr(r["ci_low"]), repr(r["ci_high"])) for r in self.rows]
        cells += [(s["scenario"], s["delta"], s["test_batch"], m, "", "", "")
                  for s in self.skipped for m in METRICS]
        order = {s: i for i, s in enumerate(SCENARIOS)}
        cells.sort(key=lambda c: (c[1], c[2], order[c[0]], METRICS.index(c[3])))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "delta", "test_batch", "metric", "mean", "ci_low", "ci_high"])
            w.writerows(cells)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "seeds": self.seeds, "rows": self.rows,
                           "skipped": self.skipped}, indent=2, sort_keys=True)


def run_scenarios(inputs: ScenarioInputs, deltas: Sequence[int], t_range: Sequence[int] | None = None,
                  level: float = 0.95) -> EvaluationReport:
    """Score the three scenarios at each test batch ``t`` and horizon ``delta``.

    * baseline: snapshot after batch ``t - delta``
    * pro_adaptive: parameters forecast ``delta`` batches past that snapshot
    * upper_bound: snapshot after batch ``t``

    Each model is scored on batch ``t``'s test split; values are aggregated over
    replicas with :func:`aggregate_ci`.  Infeasible cells appear in
    ``report.skipped`` with a reason.
    """
    from .forecast import forecast_grid

    splits = inputs.splits
    n_batches = len(splits)
    if t_range is None:
        t_range = range(n_batches)
    replicas = sorted(inputs.snapshots)
    records: list[MetricRecord] = []
    rows, skipped = [], []

    needed = []
    for delta in deltas:
        for t in t_range:
            h = t - delta
            if delta >= 1 and h + 1 >= inputs.min_history and 0 <= t < n_batches:
                needed.append((delta, t))
    missing = [(d, t) for d, t in needed if any((d, t, r) not in inputs.forecasts for r in replicas)]
    if missing:
        for delta, res in forecast_grid(inputs, missing):
            inputs.forecasts[(delta, res.target_time, res.replica_id)] = res.params

    for delta in deltas:
        for t in t_range:
            h = t - delta
            sb = splits[t] if 0 <= t < n_batches else None
            for scenario in SCENARIOS:
                reason = None
                if sb is None:
                    reason = "no test split for batch"
                elif h < 0:
                    reason = "t - delta precedes the first batch"
                elif scenario == "pro_adaptive" and delta < 1:
                    reason = "forecast horizon must be >= 1"
                elif scenario == "pro_adaptive" and h + 1 < inputs.min_history:
                    reason = f"history shorter than {inputs.min_history} batches"
                if reason is not None:
                    skipped.append({"scenario": scenario, "delta": delta, "test_batch": t, "reason": reason})
                    continue
                X, y = inputs.dataset.features[sb.test], inputs.dataset.labels[sb.test]
                per_metric = {m: [] for m in METRICS}
                for r in replicas:
                    if scenario == "baseline":
                        params = inputs.run_for(h)[r][h]
                    elif scenario == "upper_bound":
                        params = inputs.run_for(t)[r][t]
                    else:
                        params = inputs.forecasts[(delta, t, r)]
                    scores = score_model(params, X, y)
                    records.append(MetricRecord(scenario, delta, t, r, **scores))
                    for m in METRICS:
                        per_metric[m].append(scores[m])
                for m in METRICS:
                    vals = per_metric[m]
                    if len(vals) >= 2:
                        mean, lo, hi = aggregate_ci(vals, level)
                    else:
                        mean = lo = hi = float(vals[0])
                    rows.append({"scenario": scenario, "delta": delta, "test_batch": t, "metric": m,
                                 "mean": mean, "ci_low": lo, "ci_high": hi})
    return EvaluationReport(rows, skipped, records)
