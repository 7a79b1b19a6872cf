"""
Estimating a correspondence matrix
==================================

A small city with five zones. We know how many people leave each zone in
the morning and how many arrive, plus the travel time between every pair.
The entropy model turns that into a full origin-destination matrix.
"""

import numpy as np

from odcalib import (
    CostFamily,
    SolverConfig,
    accelerated_solve,
    evaluate_family,
    make_marginals,
    sinkhorn_solve,
    to_counts,
)

rng = np.random.default_rng(0)

# departures and arrivals per zone; both sum to the same population
departures = np.array([120, 80, 200, 60, 40])
arrivals = np.array([50, 150, 100, 150, 50])
marg = make_marginals(departures, arrivals)
print("population:", marg.total)

# symmetric travel times in minutes
time = rng.uniform(5, 60, (5, 5))
time = (time + time.T) / 2
np.fill_diagonal(time, 5.0)

# a linear generalized cost: the larger alpha, the more people stay close to home
T = evaluate_family(CostFamily("linear_time", alpha=0.08), time)

###############################################################################
# Plain Sinkhorn alternates exact updates of the origin and destination
# potentials. It stops once the duality gap and both marginal violations
# are below 1e-8.

d, lam, report = sinkhorn_solve(T, marg, SolverConfig())
print(f"sinkhorn: {report.iterations} iterations, gap {report.final_gap:.2e}")
print(np.round(to_counts(d, marg.total).d, 1))

###############################################################################
# The accelerated variant uses an averaged primal matrix, which tightens
# more slowly than the dual. A looser tolerance keeps this demo quick.

cfg = SolverConfig(eps_f=1e-6, eps_eq=1e-6)
d_acc, _, rep_acc = accelerated_solve(T, marg, cfg)
print(f"accelerated: {rep_acc.iterations} iterations, converged={rep_acc.converged}")
print("largest difference between the two:", np.abs(d.d - d_acc.d).max())

###############################################################################
# Row and column sums reproduce the departures and arrivals.

counts = to_counts(d, marg.total).d
print("row sums   ", np.round(counts.sum(axis=1), 6))
print("column sums", np.round(counts.sum(axis=0), 6))

# With zero cost the model has no reason to prefer any destination, and the
# answer is the independent coupling.
d0, _, _ = sinkhorn_solve(np.zeros((5, 5)), marg)
print("zero cost equals outer product:", np.allclose(d0.d, np.outer(marg.l, marg.w)))
