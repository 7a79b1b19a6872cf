"""
Dual of the entropy-linear program and the map back to the primal.

For a cost matrix ``T`` and potentials ``(a, b)`` the kernel is
``B[i, j] = exp(-T[i, j] + a[i] + b[j])``. The primal matrix is the softmax
``B / sum(B)`` and the dual objective (to be minimized) is::

    phi(a, b) = log(sum(B)) - <a, l> - <b, w>

Everything is computed from ``log B`` with a max-shifted log-sum-exp, so
large costs neither overflow nor underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NORMALIZED,
    CorrespondenceMatrix,
    DualPotentials,
    Marginals,
    ValidationError,
    as_cost_array,
)


def logsumexp(m, axis=None):
    """Max-shifted log-sum-exp of ``m`` (over all entries or along ``axis``)."""
    shift = np.max(m, axis=axis, keepdims=True)
    s = np.log(np.sum(np.exp(m - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


def _log_kernel(t, a, b):
    return a[:, None] + b[None, :] - t


def _phi(m, a, b, l, w):
    return logsumexp(m) - a @ l - b @ w


def _softmax(m):
    e = np.exp(m - np.max(m))
    return e / e.sum()


@dataclass(frozen=True)
class LogKernel:
    """``m = log B`` together with ``logsum = log(sum(exp(m)))``."""

    m: np.ndarray
    logsum: float

    @classmethod
    def build(cls, T, lam: DualPotentials) -> "LogKernel":
        t = as_cost_array(T)
        _check_dims(t, lam)
        m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
        return cls(m, logsumexp(m))


def _check_dims(t, lam, marg=None):
    n = t.shape[0]
    if lam.n != n:
        raise ValidationError(f"potentials have length {lam.n}, cost matrix is {n}x{n}")
    if marg is not None and marg.n != n:
        raise ValidationError(f"marginals have length {marg.n}, cost matrix is {n}x{n}")


def primal_from_duals(T, lam: DualPotentials) -> CorrespondenceMatrix:
    """Normalized correspondence matrix induced by the potentials ``lam``."""
    t = as_cost_array(T)
    _check_dims(t, lam)
    m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
    return CorrespondenceMatrix(_softmax(m), NORMALIZED)


def dual_objective(T, lam: DualPotentials, marg: Marginals) -> float:
    t = as_cost_array(T)
    _check_dims(t, lam, marg)
    m = _log_kernel(t, lam.lambda_l, lam.lambda_w)
    return _phi(m, lam.lambda_l, lam.lambda_w, marg.l, marg.w)


def dual_gradient(T, lam: DualPotentials, marg: Marginals):
    """Gradient of the dual objective, split into its two blocks.

    Returns
    -------
    g_l, g_w : ndarray
        ``rowsum(d) - l`` and ``colsum(d) - w`` where ``d`` is the primal
        matrix at ``lam``.
    """
    t = as_cost_array(T)
    _check_dims(t, lam, marg)
    d = _softmax(_log_kernel(t, lam.lambda_l, lam.lambda_w))
    return d.sum(axis=1) - marg.l, d.sum(axis=0) - marg.w


def entropy_cost(d, t) -> float:
    """``sum(d * t) + sum(d * log d)`` with ``0 log 0 = 0``."""
    pos = d > 0
    return float(np.sum(d * t) + np.sum(d[pos] * np.log(d[pos])))


def primal_objective(d, T) -> float:
    """Primal entropy-linear objective ``sum(d T) + sum(d ln d)``.

    ``d`` may be a normalized :class:`CorrespondenceMatrix` or a plain array
    with nonnegative entries.
    """
    t = as_cost_array(T)
    if isinstance(d, CorrespondenceMatrix):
        if d.scale != NORMALIZED:
            raise ValidationError("primal objective expects a normalized matrix")
        arr = d.d
    else:
        arr = np.asarray(d, dtype=float)
        if np.any(arr < 0):
            raise ValidationError("correspondence matrix has negative entries")
    if arr.shape != t.shape:
        raise ValidationError(f"shape mismatch: {arr.shape} vs {t.shape}")
    return entropy_cost(arr, t)
