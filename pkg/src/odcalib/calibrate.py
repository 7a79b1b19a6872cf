"""
Calibration of cost-family parameters against an observed correspondence matrix.

The objective is the squared residual between the observed commuter counts
and the model's counts, optionally divided by ``n**2``. Since it is
non-convex and cheap only in low dimension, the search is gradient-free:
an exhaustive grid (the default), simulated annealing, Piyavskii's
broken-line method for one free parameter, or random multistart with a
lattice coordinate descent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    COUNTS,
    CorrespondenceMatrix,
    SolverConfig,
    SolverError,
    ValidationError,
)
from .costs import FAMILY_PARAMS, PARAM_NAMES, CostFamily, GridSpec, evaluate_family, family_grid
from .solvers import solve

DIVISORS = ("n2", "observed")
METHODS = ("grid", "anneal", "piyavskii", "multistart")


def residual(d_obs, d_hat, normalized: bool = False, divisor: str = "n2") -> float:
    """Sum of squared differences between two correspondence matrices.

    Parameters
    ----------
    d_obs, d_hat : CorrespondenceMatrix or array_like
        Matrices on the same scale (normally commuter counts).
    normalized : bool
        Divide by ``n**2`` (``divisor="n2"``) or by the number of pairs with
        a positive observed count (``divisor="observed"``).
    """
    scales = {m.scale for m in (d_obs, d_hat) if isinstance(m, CorrespondenceMatrix)}
    if len(scales) > 1:
        raise ValidationError("residual needs both matrices on the same scale")
    a = d_obs.d if isinstance(d_obs, CorrespondenceMatrix) else np.asarray(d_obs, dtype=float)
    b = d_hat.d if isinstance(d_hat, CorrespondenceMatrix) else np.asarray(d_hat, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    r = float(np.sum((a - b) ** 2))
    if not normalized:
        return r
    if divisor == "n2":
        return r / a.shape[0] ** 2
    if divisor == "observed":
        return r / max(int(np.count_nonzero(a > 0)), 1)
    raise ValidationError(f"unknown divisor {divisor!r}; choose from {DIVISORS}")


@dataclass(frozen=True)
class Evaluation:
    eta: tuple
    residual: float
    converged: bool


@dataclass
class CalibrationResult:
    """Outcome of a parameter search for one cost family.

    ``evaluations`` holds every objective evaluation in the order it was
    made. ``best_eta`` and ``best_residual`` come from converged evaluations
    only; ties go to the lexicographically smallest ``eta``.
    """

    family: str
    best_eta: tuple
    best_residual: float
    evaluations: list
    eps_f: float
    eps_eq: float
    method: str = "grid"
    solver: str = "sinkhorn"
    normalized: bool = True
    divisor: str = "n2"
    n: int = 0
    total: float = 0.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_evaluations(cls, family, evaluations, cfg, **kwargs) -> "CalibrationResult":
        ok = [e for e in evaluations if e.converged and math.isfinite(e.residual)]
        if not ok:
            raise SolverError(f"no converged evaluation for {family}")
        best = min(ok, key=lambda e: (e.residual, e.eta))
        return cls(family, best.eta, best.residual, list(evaluations), cfg.eps_f, cfg.eps_eq, **kwargs)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "best_eta": dict(zip(PARAM_NAMES, self.best_eta)),
            "best_residual": self.best_residual,
            "method": self.method,
            "solver": self.solver,
            "normalized": self.normalized,
            "divisor": self.divisor,
            "n": self.n,
            "total": self.total,
            "eps_f": self.eps_f,
            "eps_eq": self.eps_eq,
            "extra": self.extra,
            "evaluations": [
                {"eta": list(e.eta), "residual": e.residual, "converged": e.converged}
                for e in self.evaluations
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibrationResult":
        return cls(
            family=obj["family"],
            best_eta=tuple(obj["best_eta"][p] for p in PARAM_NAMES),
            best_residual=obj["best_residual"],
            evaluations=[Evaluation(tuple(e["eta"]), e["residual"], e["converged"]) for e in obj["evaluations"]],
            eps_f=obj["eps_f"],
            eps_eq=obj["eps_eq"],
            method=obj.get("method", "grid"),
            solver=obj.get("solver", "sinkhorn"),
            normalized=obj.get("normalized", True),
            divisor=obj.get("divisor", "n2"),
            n=obj.get("n", 0),
            total=obj.get("total", 0.0),
            extra=obj.get("extra", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """``(alpha, beta, gamma, residual, converged)`` rows, one per evaluation."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(PARAM_NAMES) + ["residual", "converged"])
        for e in self.evaluations:
            w.writerow([repr(float(v)) for v in e.eta] + [repr(e.residual), int(e.converged)])
        return buf.getvalue()


def evaluate_point(problem, kind, eta, cfg=None, solver="sinkhorn", normalized=True, divisor="n2"):
    """Solve the entropy model at ``eta`` and score it against ``problem.d_obs``.

    Returns
    -------
    Evaluation
        ``converged`` is False if the solver ran out of iterations or its
        Lipschitz search failed; the residual of the last iterate is kept
        (NaN in the latter case).
    """
    cfg = cfg or SolverConfig()
    fam = CostFamily.from_eta(kind, eta)
    T = evaluate_family(fam, problem.time, problem.dist)
    try:
        d, _, report = solve(T, problem.marginals, cfg, solver)
    except SolverError:
        return Evaluation(fam.eta, math.nan, False)
    d_hat = CorrespondenceMatrix(problem.total * d.d, COUNTS, problem.total)
    r = residual(problem.d_obs, d_hat, normalized, divisor)
    return Evaluation(fam.eta, r, report.converged)


def _evaluate_star(args):
    return evaluate_point(*args)


def _check_problem(problem, kind, spec: GridSpec | None = None):
    if kind not in FAMILY_PARAMS:
        raise ValidationError(f"unknown cost family {kind!r}")
    if problem.has_empty_marginals():
        raise ValidationError("problem has zones with zero departures or arrivals")
    if spec is not None:
        extra = [p for p in spec.swept if p not in FAMILY_PARAMS[kind]]
        if extra:
            raise ValidationError(f"{kind} does not use parameter(s) {extra}")


def grid_search(kind, spec: GridSpec, problem, cfg=None, solver="sinkhorn",
                normalized=True, divisor="n2", jobs=1) -> CalibrationResult:
    """Evaluate every point of ``spec`` and keep the best converged one.

    With ``jobs > 1`` points are evaluated in a process pool; results are
    collected in grid order, so the outcome does not depend on ``jobs``.
    """
    cfg = cfg or SolverConfig()
    _check_problem(problem, kind, spec)
    points = family_grid(spec)
    args = [(problem, kind, eta, cfg, solver, normalized, divisor) for eta in points]
    if jobs and jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            evaluations = list(pool.map(_evaluate_star, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        evaluations = [_evaluate_star(a) for a in args]
    return CalibrationResult.from_evaluations(
        kind, evaluations, cfg, method="grid", solver=solver, normalized=normalized,
        divisor=divisor, n=problem.n, total=problem.total,
    )


# -- simulated annealing ---------------------------------------------------

@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric cooling schedule.

    The temperature starts at ``T0`` and is multiplied by ``factor`` after
    every ``steps`` proposals, ``n_temperatures`` times in total. ``step`` is
    the half-width of the uniform proposal box (scalar or per coordinate);
    ``None`` means a tenth of each bound's width.
    """

    T0: float = 1.0
    factor: float = 0.9
    steps: int = 50
    n_temperatures: int = 100
    step: object = None
    seed: int | None = 0

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValidationError("T0 must be positive")
        if not 0 < self.factor < 1:
            raise ValidationError("cooling factor must lie in (0, 1)")
        if self.steps < 1 or self.n_temperatures < 1:
            raise ValidationError("steps and n_temperatures must be >= 1")
        if self.step is not None and np.any(np.asarray(self.step, dtype=float) <= 0):
            raise ValidationError("proposal step must be positive")


@dataclass(frozen=True)
class AnnealStep:
    x: np.ndarray
    candidate: np.ndarray
    delta: float
    temperature: float
    u: float
    accepted: bool


def metropolis_accept(delta: float, temperature: float, u: float) -> bool:
    """Accept a move that changes the objective by ``delta``.

    Downhill moves are always accepted; uphill ones with probability
    ``exp(-delta / temperature)``, decided by the uniform draw ``u``.
    """
    if delta <= 0:
        return True
    return u < math.exp(-delta / temperature)


def _reflect(x, lo, hi):
    width = hi - lo
    y = np.mod(x - lo, 2 * width)
    y = np.where(y > width, 2 * width - y, y)
    return lo + y


def _as_bounds(bounds):
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if np.any(b[:, 1] <= b[:, 0]):
        raise ValidationError("bounds must satisfy lower < upper")
    return b[:, 0], b[:, 1]


def _finite(value, x):
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"objective is not finite at {np.asarray(x).tolist()}")
    return value


def simulated_annealing(objective, x0, sched: AnnealingSchedule, bounds, callback=None):
    """Minimize ``objective`` over a box by simulated annealing.

    Proposals are drawn uniformly from a box of half-width ``sched.step``
    around the current point and reflected back into ``bounds``. One uniform
    number is drawn per proposal whether or not it is needed, so the random
    stream depends only on the seed.

    Returns
    -------
    x_best, f_best
        The best point seen along the whole trajectory.
    """
    lo, hi = _as_bounds(bounds)
    rng = np.random.default_rng(sched.seed)
    step = 0.1 * (hi - lo) if sched.step is None else np.broadcast_to(np.asarray(sched.step, dtype=float), lo.shape)
    x = np.clip(np.asarray(x0, dtype=float).reshape(lo.shape), lo, hi)
    fx = _finite(objective(x), x)
    best_x, best_f = x.copy(), fx
    temp = sched.T0
    for _ in range(sched.n_temperatures):
        for _ in range(sched.steps):
            cand = _reflect(x + rng.uniform(-step, step), lo, hi)
            fc = _finite(objective(cand), cand)
            delta = fc - fx
            u = rng.random()
            accepted = metropolis_accept(delta, temp, u)
            if callback is not None:
                callback(AnnealStep(x.copy(), cand.copy(), delta, temp, u, accepted))
            if accepted:
                x, fx = cand, fc
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
        temp *= sched.factor
    return best_x, best_f


# -- Piyavskii broken-line method ----------------------------------------

def piyavskii_minimize(f, a, b, L, tol=1e-6, x0=None, max_evals=10_000):
    """Global minimization of an ``L``-Lipschitz function on ``[a, b]``.

    The lower envelope ``p(x) = max_i f(x_i) - L |x - x_i|`` of all
    evaluated points is minimized to pick the next point (smallest ``x`` on
    ties). Stops once the best value found is within ``tol`` of the envelope
    minimum, which bounds the true optimality gap when ``L`` is valid.

    Returns
    -------
    x_best, f_best
    """
    if not L > 0:
        raise ValidationError("Lipschitz constant must be positive")
    if not a < b:
        raise ValidationError("need a < b")
    x0 = (a + b) / 2 if x0 is None else float(x0)
    if not a <= x0 <= b:
        raise ValidationError("x0 outside [a, b]")
    xs = [x0]
    fs = [_finite(f(x0), x0)]
    best = 0
    while True:
        order = np.argsort(xs, kind="stable")
        px = [xs[i] for i in order]
        pf = [fs[i] for i in order]
        cands = []
        if px[0] > a:
            cands.append((pf[0] - L * (px[0] - a), a))
        for (x1, f1), (x2, f2) in zip(zip(px, pf), zip(px[1:], pf[1:])):
            xm = min(max((x1 + x2) / 2 + (f1 - f2) / (2 * L), x1), x2)
            cands.append((max(f1 - L * (xm - x1), f2 - L * (x2 - xm)), xm))
        if px[-1] < b:
            cands.append((pf[-1] - L * (b - px[-1]), b))
        low, x_next = min(cands)
        if fs[best] - low <= tol or x_next in xs:
            return xs[best], fs[best]
        if len(xs) >= max_evals:
            raise SolverError(f"Piyavskii budget of {max_evals} evaluations exceeded")
        xs.append(x_next)
        fs.append(_finite(f(x_next), x_next))
        if fs[-1] < fs[best]:
            best = len(xs) - 1


# -- random multistart ----------------------------------------------------

def lattice_descent(objective, x0, bounds, steps, max_evals=100_000):
    """Best-improvement coordinate descent on the lattice ``lo + k * step``.

    ``x0`` is snapped to the nearest lattice point. Each sweep tries one
    lattice step up and down along every coordinate and moves to the best
    strictly improving neighbour; it stops when there is none.
    """
    lo, hi = _as_bounds(bounds)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), lo.shape)
    top = np.floor((hi - lo) / steps + 1e-9).astype(int)
    idx = np.clip(np.rint((np.asarray(x0, dtype=float) - lo) / steps), 0, top).astype(int)
    cache = {}

    def value(k):
        key = tuple(int(v) for v in k)
        if key not in cache:
            if len(cache) >= max_evals:
                raise SolverError("lattice descent budget exceeded")
            x = lo + np.asarray(key) * steps
            cache[key] = _finite(objective(x), x)
        return cache[key]

    f_cur = value(idx)
    while True:
        best_k, best_f = None, f_cur
        for dim in range(idx.size):
            for delta in (-1, 1):
                k = idx.copy()
                k[dim] += delta
                if 0 <= k[dim] <= top[dim]:
                    fk = value(k)
                    if fk < best_f:
                        best_k, best_f = k, fk
        if best_k is None:
            return lo + idx * steps, f_cur
        idx, f_cur = best_k, best_f


def multistart(objective, bounds, k, local_optimizer=None, seed=None, steps=None):
    """Run a local optimizer from ``k`` uniform random starts; keep the best.

    ``local_optimizer(objective, x0, bounds)`` must return ``(x, value)``.
    The default is :func:`lattice_descent` with ``steps`` (default: 1/100 of
    each bound's width).
    """
    if int(k) != k or k < 1:
        raise ValidationError("need at least one start")
    lo, hi = _as_bounds(bounds)
    if local_optimizer is None:
        lattice = (hi - lo) / 100 if steps is None else steps

        def local_optimizer(obj, x0, bnds):
            return lattice_descent(obj, x0, bnds, lattice)

    rng = np.random.default_rng(seed)
    starts = rng.uniform(lo, hi, size=(int(k), lo.size))
    best = None
    for x0 in starts:
        x, fx = local_optimizer(objective, x0, bounds)
        if best is None or fx < best[1]:
            best = (np.asarray(x, dtype=float), float(fx))
    return best


# -- calibration drivers ---------------------------------------------------

_FAILED = 1e300


class _Recorder:
    """Objective over the swept parameters that logs every evaluation."""

    def __init__(self, problem, kind, spec, cfg, solver, normalized, divisor):
        self.problem, self.kind, self.spec = problem, kind, spec
        self.cfg, self.solver = cfg, solver
        self.normalized, self.divisor = normalized, divisor
        self.free = spec.swept
        self.evaluations = []
        self._memo = {}

    def eta(self, x):
        values = {p: self.spec.axis(p)[0] for p in PARAM_NAMES}
        for p, v in zip(self.free, np.atleast_1d(x)):
            values[p] = round(float(v), 12)
        return tuple(values[p] for p in PARAM_NAMES)

    def __call__(self, x):
        eta = self.eta(x)
        if eta not in self._memo:
            ev = evaluate_point(self.problem, self.kind, eta, self.cfg, self.solver,
                                self.normalized, self.divisor)
            self._memo[eta] = ev
            self.evaluations.append(ev)
        ev = self._memo[eta]
        # failed solves must not win the search
        return ev.residual if ev.converged else _FAILED


def calibrate(problem, kind, spec: GridSpec, method="grid", cfg=None, solver="sinkhorn",
              normalized=True, divisor="n2", jobs=1, schedule: AnnealingSchedule | None = None,
              lipschitz=None, tol=1e-6, starts=10, seed=0) -> CalibrationResult:
    """Calibrate ``kind`` on ``problem`` with the chosen search ``method``.

    ``spec`` supplies the swept ranges (search bounds) and fixed values for
    every method. ``piyavskii`` needs exactly one swept parameter and a
    ``lipschitz`` constant for the residual in that parameter. ``multistart``
    uses the grid steps of ``spec`` as its descent lattice.
    """
    cfg = cfg or SolverConfig()
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "grid":
        return grid_search(kind, spec, problem, cfg, solver, normalized, divisor, jobs)
    _check_problem(problem, kind, spec)
    free = spec.swept
    if not free:
        raise ValidationError(f"method {method} needs at least one swept parameter")
    rec = _Recorder(problem, kind, spec, cfg, solver, normalized, divisor)
    bounds = [spec.bounds(p) for p in free]
    extra = {"free": list(free)}
    if method == "piyavskii":
        if len(free) != 1:
            raise ValidationError("piyavskii is a one-dimensional method; sweep exactly one parameter")
        if lipschitz is None:
            raise ValidationError("piyavskii needs a Lipschitz constant")
        (a, b), = bounds
        piyavskii_minimize(lambda x: rec(x), a, b, lipschitz, tol=tol)
        extra.update(lipschitz=lipschitz, tol=tol)
    elif method == "anneal":
        lo, hi = np.array(bounds).T
        sched = schedule or AnnealingSchedule(seed=seed)
        simulated_annealing(rec, (lo + hi) / 2, sched, bounds)
        extra.update(schedule={"T0": sched.T0, "factor": sched.factor, "steps": sched.steps,
                               "n_temperatures": sched.n_temperatures,
                               "step": None if sched.step is None else np.atleast_1d(sched.step).tolist(),
                               "seed": sched.seed})
    else:
        steps = [spec.ranges[p].step for p in free]
        multistart(rec, bounds, starts, seed=seed, steps=steps)
        extra.update(starts=starts, seed=seed)
    return CalibrationResult.from_evaluations(
        kind, rec.evaluations, cfg, method=method, solver=solver, normalized=normalized,
        divisor=divisor, n=problem.n, total=problem.total, extra=extra,
    )
