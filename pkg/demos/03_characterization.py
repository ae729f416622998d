"""
Characterizing temporal variability
===================================

Per-quarter histograms are compared with the Jensen-Shannon distance and
embedded in the plane with classical MDS. The marginal p(x) returns to its
starting shape while the class-conditional view keeps moving away.
"""

import numpy as np

from proadaptive.dataset import SimConfig, generate_simulated
from proadaptive.partition import batch_by_quarter
from proadaptive.shiftchar import (conditional_pdfs, distance_matrix, estimate_pdf, igt_project,
                                   prevalence_series, shared_edges)

batches = batch_by_quarter(generate_simulated(SimConfig(seed=3)))
values = [b.X[:, 0] for b in batches]
labels = [b.y for b in batches]

###############################################################################
# Prior shift: the positive rate per quarter.
print("p(y=1):", np.round(prevalence_series(batches), 3))

###############################################################################
# Distances on shared bin edges.
edges = shared_edges(values, bins=50)
D_marg = distance_matrix(estimate_pdf(values, edges=edges))
D_cond = distance_matrix(conditional_pdfs(values, labels, edges=edges))
print("marginal distance from the first quarter:   ", np.round(D_marg[0], 2))
print("conditional distance from the first quarter:", np.round(D_cond[0], 2))

###############################################################################
# Two-dimensional maps. The marginal path folds back on itself.
for name, D in (("marginal", D_marg), ("conditional", D_cond)):
    proj = igt_project(D, dims=2)
    print(f"\n{name} map, leading eigenvalues {np.round(proj.eigenvalues, 3)}")
    for b, (x, y) in zip(batches, proj.coordinates):
        print(f"  {b.period_label}  {x:+.3f}  {y:+.3f}")
