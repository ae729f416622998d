"""
Functional forecasting of model-parameter trajectories.

Every parameter of every bootstrap model is treated as a short time series
indexed by batch.  The series is expanded in a clamped B-spline basis fitted by
least squares; the degree / knot count is picked by forward-chaining
cross-validation, and the terminal polynomial piece is extended to forecast
``horizon`` batches ahead.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .glm import ModelParams

RIDGE = 1e-10
MAPE_FLOOR = 1e-8
BLOWUP_FACTOR = 10.0
CV_TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ParameterTrajectory:
    replica_id: int
    param_index: int
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(t) < 2:
            raise ValueError("a trajectory needs at least 2 observations")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.times)

    def head(self, k: int) -> "ParameterTrajectory":
        return ParameterTrajectory(self.replica_id, self.param_index, self.times[:k], self.values[:k])


@dataclass(frozen=True, order=True)
class SplineSpec:
    degree: int
    interior_knots: int = 0

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if self.interior_knots < 0:
            raise ValueError("interior_knots must be >= 0")

    @property
    def n_basis(self) -> int:
        return self.degree + 1 + self.interior_knots

    def knot_vector(self, t_min: float, t_max: float) -> np.ndarray:
        """Clamped knots, interior ones evenly spaced on ``[t_min, t_max]``."""
        if not t_max > t_min:
            raise ValueError("empty fit domain")
        inner = np.linspace(t_min, t_max, self.interior_knots + 2)[1:-1]
        d = self.degree
        return np.concatenate([np.full(d + 1, t_min), inner, np.full(d + 1, t_max)])


DEFAULT_CANDIDATES = tuple(SplineSpec(d, m) for d in (1, 2, 3) for m in (0, 1))


def _check_knots(spec: SplineSpec, knots: np.ndarray) -> None:
    d = spec.degree
    if knots.ndim != 1 or len(knots) != spec.n_basis + d + 1:
        raise ValueError(f"knot vector must have {spec.n_basis + d + 1} entries for {spec}")
    if np.any(np.diff(knots) < 0):
        raise ValueError("knot vector must be nondecreasing")
    if np.any(knots[: d + 1] != knots[0]) or np.any(knots[-d - 1:] != knots[-1]):
        raise ValueError("knot vector must be clamped (multiplicity degree+1 at both ends)")
    if not knots[-1] > knots[0]:
        raise ValueError("knot vector spans an empty domain")
    inner = knots[d + 1: -d - 1]
    if np.any(inner <= knots[0]) or np.any(inner >= knots[-1]):
        raise ValueError("interior knots must lie strictly inside the domain")


def bspline_basis(spec: SplineSpec, knots, t) -> np.ndarray:
    """Evaluate all B-spline basis functions at ``t`` by the Cox-de Boor recursion.

    Points outside the knot span are assigned to the first or last nonempty
    knot interval, so the result there is the polynomial continuation of the
    boundary piece.

    Returns an array of shape ``t.shape + (n_basis,)``.
    """
    knots = np.asarray(knots, dtype=np.float64)
    _check_knots(spec, knots)
    t = np.asarray(t, dtype=np.float64)
    tt = np.atleast_1d(t).ravel()
    d, nb = spec.degree, spec.n_basis
    span = np.clip(np.searchsorted(knots, tt, side="right") - 1, d, nb - 1)
    N = np.zeros((len(tt), len(knots) - 1))
    N[np.arange(len(tt)), span] = 1.0
    for p in range(1, d + 1):
        nxt = np.zeros((len(tt), len(knots) - 1 - p))
        for i in range(len(knots) - 1 - p):
            left = knots[i + p] - knots[i]
            right = knots[i + p + 1] - knots[i + 1]
            if left > 0:
                nxt[:, i] += (tt - knots[i]) / left * N[:, i]
            if right > 0:
                nxt[:, i] += (knots[i + p + 1] - tt) / right * N[:, i + 1]
        N = nxt
    return N.reshape(t.shape + (nb,))


@dataclass(frozen=True, eq=False)
class SplineFit:
    spec: SplineSpec
    knot_vector: np.ndarray
    coefficients: np.ndarray
    fit_domain: tuple[float, float]
    residuals: np.ndarray = field(repr=False)

    def __call__(self, t):
        return bspline_basis(self.spec, self.knot_vector, t) @ self.coefficients


def fit_spline(traj: ParameterTrajectory, spec: SplineSpec) -> SplineFit:
    """Least-squares spline fit via ridge-stabilised normal equations.

    One step of iterative refinement removes the bias the tiny ridge would
    otherwise leave, so data inside the basis span are reproduced exactly.
    """
    if len(traj) < spec.n_basis:
        raise ValueError(f"insufficient observations: {len(traj)} < {spec.n_basis} basis functions")
    t0, t1 = float(traj.times[0]), float(traj.times[-1])
    knots = spec.knot_vector(t0, t1)
    B = bspline_basis(spec, knots, traj.times)
    G = B.T @ B
    A = G + RIDGE * np.eye(spec.n_basis)
    rhs = B.T @ traj.values
    c = np.linalg.solve(A, rhs)
    c += np.linalg.solve(A, rhs - G @ c)
    return SplineFit(spec, knots, c, (t0, t1), traj.values - B @ c)


@dataclass(frozen=True)
class CVResult:
    spec: SplineSpec | None
    score: float
    fallback: bool
    scores: dict = field(default_factory=dict, compare=False)


def _ape(actual: float, predicted: float) -> float:
    return abs(actual - predicted) / max(abs(actual), MAPE_FLOOR) * 100.0


def cv_score(traj: ParameterTrajectory, spec: SplineSpec) -> float | None:
    """Mean one-step-ahead absolute percentage error, or None if infeasible."""
    cuts = range(spec.n_basis + 1, len(traj))
    if not cuts:
        return None
    errs = []
    for k in cuts:
        fit = fit_spline(traj.head(k), spec)
        errs.append(_ape(traj.values[k], float(fit(traj.times[k]))))
    return float(np.mean(errs))


def select_degree_cv(traj: ParameterTrajectory, candidate_specs: Sequence[SplineSpec] = DEFAULT_CANDIDATES) -> CVResult:
    """Pick the candidate with the lowest forward-chaining CV error.

    Scores within ``CV_TIE_TOL`` (relative) count as ties, resolved towards
    fewer basis functions, then lower degree.  If no candidate has a usable
    cut the result is the persistence fallback (``spec=None``).
    """
    scores = {}
    for spec in candidate_specs:
        s = cv_score(traj, spec)
        if s is not None and np.isfinite(s):
            scores[spec] = s
    if not scores:
        return CVResult(None, float("nan"), True, scores)
    best_score = min(scores.values())
    tol = CV_TIE_TOL * max(1.0, best_score)
    tied = [s for s, v in scores.items() if v <= best_score + tol]
    best = min(tied, key=lambda s: (s.n_basis, s.degree))
    return CVResult(best, scores[best], False, scores)


@dataclass
class ParamForecast:
    value: float
    fallback: bool
    spec: SplineSpec | None


def forecast_trajectory(traj: ParameterTrajectory, horizon: float,
                        candidate_specs: Sequence[SplineSpec] = DEFAULT_CANDIDATES) -> ParamForecast:
    """Forecast one trajectory ``horizon`` time units past its last observation.

    Falls back to the last observed value when CV finds no feasible spec, or
    when the extrapolation is non-finite or exceeds ``BLOWUP_FACTOR`` times the
    largest magnitude seen in the history.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    last = float(traj.values[-1])
    cv = select_degree_cv(traj, candidate_specs)
    if cv.fallback:
        return ParamForecast(last, True, None)
    fit = fit_spline(traj, cv.spec)
    value = float(fit(traj.times[-1] + horizon))
    bound = BLOWUP_FACTOR * float(np.max(np.abs(traj.values)))
    if not np.isfinite(value) or abs(value) > bound:
        return ParamForecast(last, True, cv.spec)
    return ParamForecast(value, False, cv.spec)


@dataclass
class ForecastResult:
    replica_id: int
    target_time: int
    params: ModelParams
    fallback_flags: np.ndarray
    specs: list
    per_param_mape: np.ndarray
    per_param_mae: np.ndarray


def build_trajectories(snapshots: dict[int, Sequence[ModelParams]] | Sequence[Sequence[ModelParams]],
                       upto: int | None = None) -> list[ParameterTrajectory]:
    """One trajectory per (replica, parameter) from per-replica snapshot lists.

    ``upto`` truncates every history to batches ``0..upto``.
    """
    if not isinstance(snapshots, dict):
        snapshots = dict(enumerate(snapshots))
    lengths = {len(s) for s in snapshots.values()}
    if len(lengths) > 1:
        raise ValueError(f"ragged snapshot lists: lengths {sorted(lengths)}")
    out = []
    for r in sorted(snapshots):
        hist = snapshots[r] if upto is None else snapshots[r][: upto + 1]
        M = np.array([p.as_vector() for p in hist])
        times = np.arange(len(hist))
        out.extend(ParameterTrajectory(r, j, times, M[:, j]) for j in range(M.shape[1]))
    return out


def mean_snapshots(snapshots: dict[int, Sequence[ModelParams]]) -> list[ModelParams]:
    """Replica-averaged snapshots, for forecasting the mean trajectory."""
    stack = np.array([[p.as_vector() for p in snapshots[r]] for r in sorted(snapshots)])
    return [ModelParams.from_vector(v) for v in stack.mean(axis=0)]


def forecast_params(trajectories: Sequence[ParameterTrajectory], horizon: int,
                    candidate_specs: Sequence[SplineSpec] = DEFAULT_CANDIDATES,
                    actual: ModelParams | None = None) -> ForecastResult:
    """Forecast every parameter of one replica and assemble the model.

    ``trajectories`` must all belong to one replica, ordered weights first and
    bias last.  When ``actual`` is given the per-parameter APE/AE against it is
    filled in, otherwise those entries are NaN.
    """
    if not trajectories:
        raise ValueError("no trajectories to forecast")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    replica = {tr.replica_id for tr in trajectories}
    if len(replica) != 1:
        raise ValueError("trajectories span several replicas")
    trajectories = sorted(trajectories, key=lambda tr: tr.param_index)
    if [tr.param_index for tr in trajectories] != list(range(len(trajectories))):
        raise ValueError("parameter indices must be 0..D")
    end = trajectories[0].times[-1]
    if any(tr.times[-1] != end for tr in trajectories):
        raise ValueError("trajectories end at different times")
    fcs = [forecast_trajectory(tr, horizon, candidate_specs) for tr in trajectories]
    vec = np.array([f.value for f in fcs])
    if actual is not None:
        a = actual.as_vector()
        ape = np.abs(a - vec) / np.maximum(np.abs(a), MAPE_FLOOR) * 100.0
        ae = np.abs(a - vec)
    else:
        ape = ae = np.full(len(vec), np.nan)
    return ForecastResult(replica.pop(), int(end) + horizon, ModelParams.from_vector(vec),
                          np.array([f.fallback for f in fcs]), [f.spec for f in fcs], ape, ae)


def mape(actual, forecast) -> float:
    """Mean absolute percentage error with denominators floored at ``MAPE_FLOOR``."""
    a = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape:
        raise ValueError("actual and forecast differ in length")
    if a.size == 0:
        raise ValueError("empty input")
    if np.any(np.abs(a) < MAPE_FLOOR):
        warnings.warn("near-zero actual values: MAPE denominator floored", RuntimeWarning, stacklevel=2)
    return float(np.mean(np.abs(a - f) / np.maximum(np.abs(a), MAPE_FLOOR)) * 100.0)


def mae(actual, forecast) -> float:
    a = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape:
        raise ValueError("actual and forecast differ in length")
    if a.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(a - f)))


FORECAST_COLUMNS = ["replica_id", "param_index", "target_batch", "delta", "forecast", "fallback_flag",
                    "cv_degree", "cv_knots", "mape_when_realized", "mae_when_realized"]


def write_forecasts(results: Sequence[tuple[int, ForecastResult]], path) -> None:
    """Forecast table; ``results`` holds ``(delta, ForecastResult)`` pairs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for delta, res in results:
            vec = res.params.as_vector()
            for j, v in enumerate(vec):
                spec = res.specs[j]
                w.writerow([res.replica_id, j, res.target_time, delta, repr(float(v)),
                            int(res.fallback_flags[j]),
                            "" if spec is None else spec.degree, "" if spec is None else spec.interior_knots,
                            _fmt(res.per_param_mape[j]), _fmt(res.per_param_mae[j])])


def _fmt(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def read_forecasts(path) -> dict[tuple[int, int, int], ModelParams]:
    """Map ``(delta, target_batch, replica_id)`` to the forecast model."""
    acc: dict[tuple[int, int, int], dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["delta"]), int(row["target_batch"]), int(row["replica_id"]))
            acc.setdefault(key, {})[int(row["param_index"])] = float(row["forecast"])
    return {k: ModelParams.from_vector([v[j] for j in sorted(v)]) for k, v in acc.items()}


def forecast_grid(inputs, cells: Sequence[tuple[int, int]]) -> list[tuple[int, ForecastResult]]:
    """Forecasts for every replica at each ``(delta, t)`` cell.

    The history ends at batch ``t - delta`` of the run trained up to there;
    the realised parameters after batch ``t`` fill in the MAPE columns.
    ``inputs`` is a :class:`~proadaptive.metrics_eval.ScenarioInputs`.
    """
    specs = tuple(inputs.candidate_specs) or DEFAULT_CANDIDATES
    out = []
    for delta, t in cells:
        h = t - delta
        run, realised = inputs.run_for(h), inputs.run_for(t)
        if inputs.mean_trajectory:
            hist = mean_snapshots({r: run[r][: h + 1] for r in run})
            shared = forecast_params(build_trajectories({0: hist}), delta, specs)
        for r in sorted(run):
            actual = realised[r][t] if t < len(realised[r]) else None
            if inputs.mean_trajectory:
                res = _rebind(shared, r, actual)
            else:
                res = forecast_params(build_trajectories({r: run[r][: h + 1]}), delta, specs, actual)
            out.append((delta, res))
    return out


def _rebind(shared: ForecastResult, replica_id: int, actual: ModelParams | None) -> ForecastResult:
    vec = shared.params.as_vector()
    if actual is not None:
        a = actual.as_vector()
        ape, ae = np.abs(a - vec) / np.maximum(np.abs(a), MAPE_FLOOR) * 100.0, np.abs(a - vec)
    else:
        ape = ae = np.full(len(vec), np.nan)
    return ForecastResult(replica_id, shared.target_time, shared.params, shared.fallback_flags,
                          shared.specs, ape, ae)
