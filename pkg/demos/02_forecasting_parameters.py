"""
Forecasting model parameters
============================

Each parameter's history is fitted with a small B-spline, the degree chosen
by forward-chaining validation, and extrapolated a few quarters ahead.
"""

import numpy as np

from proadaptive.forecast import (DEFAULT_CANDIDATES, ParameterTrajectory, SplineSpec, fit_spline,
                                  forecast_trajectory, select_degree_cv)

###############################################################################
# A smooth trend with a little noise.
rng = np.random.default_rng(0)
t = np.arange(10)
y = 0.05 * t ** 2 - 0.3 * t + 1 + 0.02 * rng.normal(size=10)
traj = ParameterTrajectory(replica_id=0, param_index=0, times=t, values=y)

###############################################################################
# Forward-chaining scores of every candidate (lower is better).
cv = select_degree_cv(traj, DEFAULT_CANDIDATES)
for spec, score in cv.scores.items():
    print(f"degree {spec.degree}, {spec.interior_knots} interior knot(s): mean APE {score:.3f}%")
print("selected:", cv.spec)

###############################################################################
# The chosen spline, evaluated inside and beyond the observed range.
fit = fit_spline(traj, cv.spec)
print("max in-sample residual:", np.abs(fit.residuals).max())
for h in (1, 2, 4):
    fc = forecast_trajectory(traj, h)
    print(f"horizon {h}: forecast {fc.value:.4f}, truth without noise {0.05 * (9 + h) ** 2 - 0.3 * (9 + h) + 1:.4f}")

###############################################################################
# A cubic forced onto an oscillating series explodes; the forecast falls
# back to the last observed value and is flagged.
wild = ParameterTrajectory(0, 0, np.arange(6), np.array([0.0, 1.0, -1.0, 1.0, -1.0, 0.5]))
print("raw cubic at t=15:", float(fit_spline(wild, SplineSpec(3, 0))(15.0)))
fc = forecast_trajectory(wild, 10, (SplineSpec(3, 0),))
print("guarded forecast:", fc.value, "fallback:", fc.fallback)
