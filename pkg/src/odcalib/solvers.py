"""
Sinkhorn and accelerated Sinkhorn solvers for the entropy model.

Both solvers minimize the dual objective over the two potential blocks and
stop once the duality gap and the marginal violations drop below the
configured tolerances::

    |f(d) + phi(lambda)| <= eps_f
    ||d 1 - l||_2        <= eps_eq
    ||d^T 1 - w||_2      <= eps_eq

Hitting the iteration budget is not an error: the report comes back with
``converged=False`` so that calibration sweeps can carry on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    NORMALIZED,
    CorrespondenceMatrix,
    DualPotentials,
    Marginals,
    SolveReport,
    SolverConfig,
    SolverError,
    ValidationError,
    as_cost_array,
)
from .dual import _log_kernel, _softmax, entropy_cost, logsumexp

SINKHORN_MAX_ITERS = 100_000
ACCELERATED_MAX_ITERS = 10_000
MAX_DOUBLINGS = 64

# slack for the sufficient-decrease test, in units of |phi|; without it the
# test can fail on round-off alone once the gradient is ~1e-8
_DECREASE_RTOL = 4 * np.finfo(float).eps


def _check_positive(marg: Marginals):
    if np.any(marg.l <= 0) or np.any(marg.w <= 0):
        raise ValidationError(
            "zero marginal entry; drop empty zones before solving"
        )


def _prepare(T, marg: Marginals):
    t = as_cost_array(T)
    if marg.n != t.shape[0]:
        raise ValidationError(f"marginals have length {marg.n}, cost matrix is {t.shape[0]}x{t.shape[0]}")
    _check_positive(marg)
    return t


def _centered(T, marg: Marginals):
    """Cost matrix shifted so its minimum is zero, and the shift.

    The primal matrix and the potentials do not depend on a constant added
    to ``T``; the dual value moves by exactly minus that constant. Working on
    the shifted matrix keeps dual values on the scale of the cost spread, so
    the solvers take the same steps for ``T`` and ``T + c``.
    """
    t = _prepare(T, marg)
    shift = float(t.min())
    return t - shift, shift


# Block steps use the row (column) sums of the normalized kernel, i.e.
# ln(B 1) - ln(1^T B 1). The extra term is a constant shift of the block,
# which leaves the primal matrix, the dual value and its gradient unchanged
# but keeps the potentials from drifting.

def _row_step(m, log_l):
    return log_l - logsumexp(m, axis=1) + logsumexp(m)


def _col_step(m, log_w):
    return log_w - logsumexp(m, axis=0) + logsumexp(m)


def sinkhorn_block_update_l(lam: DualPotentials, T, marg: Marginals) -> DualPotentials:
    """Exact minimization of the dual over the origin block.

    ``lambda_l <- lambda_l + ln(l) - ln(rowsum(d))`` with ``d`` the current
    primal matrix; afterwards the row sums of the primal matrix equal ``l``.
    """
    t = _prepare(T, marg)
    m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
    return DualPotentials(lam.lambda_l + _row_step(m, np.log(marg.l)), lam.lambda_w)


def sinkhorn_block_update_w(lam: DualPotentials, T, marg: Marginals) -> DualPotentials:
    """Exact minimization of the dual over the destination block."""
    t = _prepare(T, marg)
    m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
    return DualPotentials(lam.lambda_l, lam.lambda_w + _col_step(m, np.log(marg.w)))


def round_to_marginals(d, l, w):
    """Project ``d`` onto the transport polytope of ``(l, w)``.

    One row rescaling and one column rescaling (each only shrinking), then a
    rank-one correction that restores the mass removed. The result has row
    sums ``l`` and column sums ``w`` up to round-off.
    """
    r = d.sum(axis=1)
    x = np.minimum(1.0, np.divide(l, r, out=np.ones_like(l), where=r > 0))
    f = d * x[:, None]
    c = f.sum(axis=0)
    y = np.minimum(1.0, np.divide(w, c, out=np.ones_like(w), where=c > 0))
    f = f * y[None, :]
    err_r = l - f.sum(axis=1)
    err_c = w - f.sum(axis=0)
    mass = err_r.sum()
    if mass > 0:
        f = f + np.outer(err_r, err_c) / mass
    return np.maximum(f, 0.0)


def _violations(d, l, w):
    return float(np.linalg.norm(d.sum(axis=1) - l)), float(np.linalg.norm(d.sum(axis=0) - w))


def stopping_check(d_hat, lam, T, marg: Marginals, cfg: SolverConfig) -> bool:
    """True iff the gap and both marginal violations are within tolerance.

    ``d_hat`` is the primal candidate (array or normalized matrix) and ``lam``
    the dual point the gap is measured against.
    """
    t = as_cost_array(T)
    d = d_hat.d if isinstance(d_hat, CorrespondenceMatrix) else np.asarray(d_hat, dtype=float)
    rv, cv = _violations(d, marg.l, marg.w)
    if not (rv <= cfg.eps_eq and cv <= cfg.eps_eq):
        return False
    if math.isinf(cfg.eps_f):
        return True
    m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
    phi = logsumexp(m) - lam.lambda_l @ marg.l - lam.lambda_w @ marg.w
    return abs(entropy_cost(d, t) + phi) <= cfg.eps_f


def _report(solver, iters, trace, gap, rv, cv, cfg):
    converged = gap <= cfg.eps_f and rv <= cfg.eps_eq and cv <= cfg.eps_eq
    return SolveReport(
        iterations=iters,
        objective_trace=tuple(trace),
        final_gap=gap,
        row_violation=rv,
        col_violation=cv,
        converged=bool(converged),
        solver=solver,
    )


def sinkhorn_solve(T, marg: Marginals, cfg: SolverConfig | None = None, callback=None):
    """Plain Sinkhorn: alternate exact block minimizations starting from zero.

    Even iterations update the origin block, odd ones the destination block.
    The duality gap is measured on the current primal matrix rounded onto the
    exact marginals (see :func:`round_to_marginals`).

    Parameters
    ----------
    T : CostMatrix or array_like
        Generalized cost matrix.
    marg : Marginals
        Strictly positive marginals.
    cfg : SolverConfig, optional
        Tolerances; ``max_iters`` defaults to 100000.
    callback : callable, optional
        Called as ``callback(k, d, phi)`` after iteration ``k`` with the
        primal matrix and dual value at the updated potentials.

    Returns
    -------
    d : CorrespondenceMatrix
        Normalized primal matrix at the final potentials.
    lam : DualPotentials
        Final potentials.
    report : SolveReport
        ``objective_trace[k]`` is the dual value after ``k`` iterations.
    """
    cfg = cfg or SolverConfig()
    t, shift = _centered(T, marg)
    max_iters = cfg.max_iters or SINKHORN_MAX_ITERS
    l, w = marg.l, marg.w
    log_l, log_w = np.log(l), np.log(w)
    n = t.shape[0]
    a = np.zeros(n)
    b = np.zeros(n)
    m = _log_kernel(t, a, b)
    trace = [logsumexp(m)]
    gap = math.inf
    rv = cv = math.inf
    k = 0
    while k < max_iters:
        if k % 2 == 0:
            a = a + _row_step(m, log_l)
        else:
            b = b + _col_step(m, log_w)
        k += 1
        m = _log_kernel(t, a, b)
        phi = logsumexp(m) - a @ l - b @ w
        trace.append(phi)
        d = _softmax(m)
        if callback is not None:
            callback(k, d, phi - shift)
        rv, cv = _violations(d, l, w)
        if rv <= cfg.eps_eq and cv <= cfg.eps_eq:
            gap = abs(entropy_cost(round_to_marginals(d, l, w), t) + phi)
            if gap <= cfg.eps_f:
                break
    d = _softmax(m)
    if math.isinf(gap):
        gap = abs(entropy_cost(round_to_marginals(d, l, w), t) + trace[-1])
    report = _report("sinkhorn", k, [p - shift for p in trace], gap, rv, cv, cfg)
    return CorrespondenceMatrix(d, NORMALIZED), DualPotentials(a, b), report


@dataclass
class AcceleratedState:
    """Iterates of the accelerated solver between outer iterations.

    ``x``, ``y`` and ``v`` are stacked potentials ``[lambda_l, lambda_w]``;
    ``L`` is the current Lipschitz estimate and ``a`` the step sequence value.
    """

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    L: float
    a: float
    d_hat: np.ndarray


def accelerated_solve(T, marg: Marginals, cfg: SolverConfig | None = None):
    """Accelerated alternating minimization with adaptive Lipschitz estimate.

    Each outer iteration halves the Lipschitz estimate, then doubles it until
    the sufficient-decrease test passes. Within a trial the solver forms the
    extrapolated point ``y``, picks the block with the larger gradient norm
    (origin block on ties), minimizes exactly over it to get the new ``x`` and
    takes a gradient step of length ``a`` on ``v``. The primal estimate is a
    weighted average of the matrices induced by the ``y`` points.

    Returns
    -------
    d_hat : CorrespondenceMatrix
        Averaged primal matrix.
    x : DualPotentials
        Final dual iterate.
    report : SolveReport
        ``objective_trace[k]`` is the dual value at ``x`` after ``k`` outer
        iterations.

    Raises
    ------
    SolverError
        If one outer iteration needs more than 64 doublings of ``L``.
    """
    cfg = cfg or SolverConfig()
    t, shift = _centered(T, marg)
    max_iters = cfg.max_iters or ACCELERATED_MAX_ITERS
    l, w = marg.l, marg.w
    log_l, log_w = np.log(l), np.log(w)
    n = t.shape[0]

    def split(z):
        return z[:n], z[n:]

    def phi_at(z):
        za, zb = split(z)
        return logsumexp(_log_kernel(t, za, zb)) - za @ l - zb @ w

    x = np.zeros(2 * n)
    state = AcceleratedState(x=x, y=x.copy(), v=x.copy(), L=float(cfg.initial_L), a=0.0,
                             d_hat=_softmax(_log_kernel(t, *split(x))))
    phi_x = phi_at(x)
    trace = [phi_x]
    gap = math.inf
    rv = cv = math.inf
    k = 0
    while k < max_iters:
        L_next = state.L / 2
        for _ in range(MAX_DOUBLINGS + 1):
            a_next = 1 / (2 * L_next) + math.sqrt(1 / (4 * L_next**2) + state.a**2 * state.L / L_next)
            tau = 1 / (a_next * L_next)
            y = tau * state.v + (1 - tau) * state.x
            ya, yb = split(y)
            m_y = _log_kernel(t, ya, yb)
            lse_y = logsumexp(m_y)
            d_y = np.exp(m_y - lse_y)
            grad = np.concatenate([d_y.sum(axis=1) - l, d_y.sum(axis=0) - w])
            g_l, g_w = split(grad)
            if g_l @ g_l >= g_w @ g_w:
                x_new = np.concatenate([ya + _row_step(m_y, log_l), yb])
            else:
                x_new = np.concatenate([ya, yb + _col_step(m_y, log_w)])
            phi_y = lse_y - ya @ l - yb @ w
            phi_new = phi_at(x_new)
            slack = _DECREASE_RTOL * max(1.0, abs(phi_y))
            if phi_new <= phi_y - (grad @ grad) / (2 * L_next) + slack:
                break
            L_next *= 2
        else:
            raise SolverError("Lipschitz search diverged")
        d_hat = (a_next * d_y + state.L * state.a**2 * state.d_hat) / (L_next * a_next**2)
        state = AcceleratedState(
            x=x_new, y=y, v=state.v - a_next * grad, L=L_next, a=a_next, d_hat=d_hat
        )
        phi_x = phi_new
        trace.append(phi_x)
        k += 1
        rv, cv = _violations(d_hat, l, w)
        if rv <= cfg.eps_eq and cv <= cfg.eps_eq:
            gap = abs(entropy_cost(d_hat, t) + phi_x)
            if gap <= cfg.eps_f:
                break
    d_hat = state.d_hat / state.d_hat.sum()
    if math.isinf(gap):
        gap = abs(entropy_cost(d_hat, t) + phi_x)
    report = _report("accelerated", k, [p - shift for p in trace], gap, rv, cv, cfg)
    return CorrespondenceMatrix(d_hat, NORMALIZED), DualPotentials(*split(state.x)), report


SOLVERS = {"sinkhorn": sinkhorn_solve, "accelerated": accelerated_solve}


def solve(T, marg: Marginals, cfg: SolverConfig | None = None, solver: str = "sinkhorn"):
    """Dispatch to one of :data:`SOLVERS` by name."""
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValidationError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(T, marg, cfg)
