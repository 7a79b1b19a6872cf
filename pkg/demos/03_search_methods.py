"""
Gradient-free searches
======================

A grid is the safe default, but each point costs one model solve. Here
the other searches run on the same one-parameter residual curve:
simulated annealing, Piyavskii's broken-line method and random multistart.
"""

import numpy as np

from odcalib import (
    AnnealingSchedule,
    CostFamily,
    GridSpec,
    ParamRange,
    build_problem,
    calibrate,
    generate_synthetic,
    piyavskii_minimize,
)

# integer counts this time, so the residual has an honest floor
problem = build_problem(generate_synthetic(12, seed=5, family=CostFamily("linear_time", 0.07), N=5000))
spec = GridSpec({"alpha": ParamRange(0.01, 0.2, 0.001)})

grid = calibrate(problem, "linear_time", spec)
print(f"grid        alpha={grid.best_eta[0]:.3f} residual={grid.best_residual:.4f} "
      f"({len(grid.evaluations)} solves)")

sched = AnnealingSchedule(T0=1.0, factor=0.8, steps=10, n_temperatures=20, seed=0)
anneal = calibrate(problem, "linear_time", spec, method="anneal", schedule=sched)
print(f"anneal      alpha={anneal.best_eta[0]:.3f} residual={anneal.best_residual:.4f} "
      f"({len(anneal.evaluations)} solves)")

multi = calibrate(problem, "linear_time", spec, method="multistart", starts=5, seed=0)
print(f"multistart  alpha={multi.best_eta[0]:.3f} residual={multi.best_residual:.4f} "
      f"({len(multi.evaluations)} solves)")

###############################################################################
# Piyavskii needs a Lipschitz constant, and its cost grows with it. Over the
# whole range the curve is steep at the ends, so we bracket the minimum from
# the grid first and bound the slope there.

lo, hi = 0.05, 0.09
pts = [(e.eta[0], e.residual) for e in grid.evaluations if lo <= e.eta[0] <= hi]
alphas, values = np.array(pts).T
L = 2 * np.max(np.abs(np.diff(values) / np.diff(alphas)))
bracket = GridSpec({"alpha": ParamRange(lo, hi, 0.001)})
piy = calibrate(problem, "linear_time", bracket, method="piyavskii", lipschitz=L, tol=0.1)
print(f"piyavskii   alpha={piy.best_eta[0]:.4f} residual={piy.best_residual:.4f} "
      f"({len(piy.evaluations)} solves, L={L:.0f})")

# the method itself works on any Lipschitz function
x, fx = piyavskii_minimize(lambda x: abs(x - 0.3), 0.0, 1.0, L=1.0, tol=1e-4)
print(f"|x - 0.3| on [0, 1]: x*={x:.5f}")
