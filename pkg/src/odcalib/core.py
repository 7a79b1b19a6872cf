"""
Value types shared across the package.

Every type is a frozen dataclass holding read-only numpy arrays; the
constructors validate their invariants and raise :class:`ValidationError`
on bad input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORMALIZED = "normalized"
COUNTS = "counts"


class ODError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ODError, ValueError):
    """An input violates a documented precondition or type invariant."""


class SolverError(ODError, RuntimeError):
    """A solver could not proceed (e.g. the Lipschitz search diverged)."""


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _array_eq(a, b):
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class Marginals:
    """Normalized departures ``l`` and arrivals ``w`` over ``n`` zones.

    ``total`` is the population N the fractions were normalized by (1.0 when
    the marginals were given as fractions directly).
    """

    l: np.ndarray
    w: np.ndarray
    total: float = 1.0

    def __post_init__(self):
        l = _frozen(self.l, 1, "l")
        w = _frozen(self.w, 1, "w")
        if l.shape != w.shape:
            raise ValidationError(f"l and w lengths differ: {l.size} != {w.size}")
        if l.size < 2:
            raise ValidationError("need at least 2 zones")
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(w))):
            raise ValidationError("marginals must be finite")
        if np.any(l < 0) or np.any(w < 0):
            raise ValidationError("marginals must be nonnegative")
        if abs(l.sum() - 1.0) > 1e-12 or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(
                f"marginals must sum to 1 (got {l.sum()!r}, {w.sum()!r})"
            )
        if not self.total > 0:
            raise ValidationError("total must be positive")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "total", float(self.total))

    @property
    def n(self) -> int:
        return self.l.size

    def __eq__(self, other):
        if not isinstance(other, Marginals):
            return NotImplemented
        return _array_eq(self.l, other.l) and _array_eq(self.w, other.w) and self.total == other.total


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Square matrix of generalized travel costs ``t[i, j]``."""

    t: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t, 2, "cost matrix")
        if t.shape[0] != t.shape[1]:
            raise ValidationError(f"cost matrix must be square, got {t.shape}")
        if t.shape[0] < 2:
            raise ValidationError("need at least 2 zones")
        if not np.all(np.isfinite(t)):
            raise ValidationError("cost matrix has non-finite entries")
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CostMatrix):
            return NotImplemented
        return _array_eq(self.t, other.t)


@dataclass(frozen=True, eq=False)
class CorrespondenceMatrix:
    """Origin-destination matrix, either as fractions or as commuter counts.

    With ``scale == "normalized"`` the entries sum to one and ``total`` is the
    population the fractions refer to. With ``scale == "counts"`` the entries
    sum to ``total``.
    """

    d: np.ndarray
    scale: str = NORMALIZED
    total: float = 1.0

    def __post_init__(self):
        d = _frozen(self.d, 2, "correspondence matrix")
        if d.shape[0] != d.shape[1]:
            raise ValidationError(f"correspondence matrix must be square, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("correspondence matrix has non-finite entries")
        if np.any(d < 0):
            raise ValidationError("correspondence matrix has negative entries")
        if self.scale not in (NORMALIZED, COUNTS):
            raise ValidationError(f"unknown scale {self.scale!r}")
        total = float(self.total)
        if not total > 0:
            raise ValidationError("total must be positive")
        s = d.sum()
        if self.scale == NORMALIZED and abs(s - 1.0) > 1e-9:
            raise ValidationError(f"normalized matrix sums to {s!r}, expected 1")
        if self.scale == COUNTS and abs(s - total) > 1e-6 * total:
            raise ValidationError(f"count matrix sums to {s!r}, expected {total!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "total", total)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def normalized(self) -> "CorrespondenceMatrix":
        if self.scale == NORMALIZED:
            return self
        return CorrespondenceMatrix(self.d / self.total, NORMALIZED, self.total)

    def __eq__(self, other):
        if not isinstance(other, CorrespondenceMatrix):
            return NotImplemented
        return _array_eq(self.d, other.d) and self.scale == other.scale and self.total == other.total


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """The two blocks of dual variables, one per origin and one per destination."""

    lambda_l: np.ndarray
    lambda_w: np.ndarray

    def __post_init__(self):
        a = _frozen(self.lambda_l, 1, "lambda_l")
        b = _frozen(self.lambda_w, 1, "lambda_w")
        if a.shape != b.shape:
            raise ValidationError("potential blocks have different lengths")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("dual potentials must be finite")
        object.__setattr__(self, "lambda_l", a)
        object.__setattr__(self, "lambda_w", b)

    @classmethod
    def zeros(cls, n: int) -> "DualPotentials":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.lambda_l.size

    def __eq__(self, other):
        if not isinstance(other, DualPotentials):
            return NotImplemented
        return _array_eq(self.lambda_l, other.lambda_l) and _array_eq(self.lambda_w, other.lambda_w)


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration budget shared by both solvers.

    Parameters
    ----------
    eps_f : float
        Bound on the duality gap ``|f(d) + phi(lambda)|``.
    eps_eq : float
        Bound on the Euclidean norm of each marginal violation.
    max_iters : int
        Iteration budget. ``None`` picks the per-solver default.
    initial_L : float
        Starting Lipschitz estimate of the accelerated solver.
    """

    eps_f: float = 1e-8
    eps_eq: float = 1e-8
    max_iters: int | None = None
    initial_L: float = 1.0

    def __post_init__(self):
        if not self.eps_f > 0 or not self.eps_eq > 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iters is not None and (int(self.max_iters) != self.max_iters or self.max_iters < 1):
            raise ValidationError("max_iters must be a positive integer")
        if not (self.initial_L > 0 and np.isfinite(self.initial_L)):
            raise ValidationError("initial_L must be positive and finite")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    objective_trace: tuple = field(repr=False)
    final_gap: float
    row_violation: float
    col_violation: float
    converged: bool
    solver: str = ""

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_gap": self.final_gap,
            "row_violation": self.row_violation,
            "col_violation": self.col_violation,
            "objective_trace": list(self.objective_trace),
        }


def make_marginals(L, W) -> Marginals:
    """Normalize departure counts ``L`` and arrival counts ``W``.

    Both vectors must have the same population total; a mismatch is treated
    as a data error rather than silently rescaled.
    """
    L = np.asarray(L, dtype=float)
    W = np.asarray(W, dtype=float)
    if L.ndim != 1 or W.ndim != 1:
        raise ValidationError("L and W must be vectors")
    if L.shape != W.shape:
        raise ValidationError(f"length mismatch: {L.size} != {W.size}")
    if L.size < 2:
        raise ValidationError("need at least 2 zones")
    if np.any(L < 0) or np.any(W < 0) or not (np.all(np.isfinite(L)) and np.all(np.isfinite(W))):
        raise ValidationError("counts must be finite and nonnegative")
    total_l, total_w = L.sum(), W.sum()
    if total_l <= 0:
        raise ValidationError("all-zero counts")
    if total_l != total_w:
        raise ValidationError(f"totals differ: sum(L)={total_l!r}, sum(W)={total_w!r}")
    l = L / total_l
    w = W / total_w
    # re-normalize away rounding so the 1e-12 invariant holds for large n
    return Marginals(l / l.sum(), w / w.sum(), total_l)


def to_counts(d: CorrespondenceMatrix, N: float) -> CorrespondenceMatrix:
    """Scale a normalized matrix to ``N`` persons."""
    if not N > 0:
        raise ValidationError("N must be positive")
    if d.scale != NORMALIZED:
        raise ValidationError("to_counts expects a normalized matrix")
    return CorrespondenceMatrix(N * d.d, COUNTS, N)


def as_cost_array(T) -> np.ndarray:
    if isinstance(T, CostMatrix):
        return T.t
    return CostMatrix(T).t
