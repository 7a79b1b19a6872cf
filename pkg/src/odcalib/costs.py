"""
Parametric travel-cost families and parameter grids.

Each family maps observed mean travel time (minutes) and straight-line
distance (km) to a generalized cost matrix using parameters
``eta = (alpha, beta, gamma)``:

=================  =========================================
``linear_time``    ``alpha * time``
``power_time``     ``alpha * time**gamma``
``power_time_dist`` ``alpha * time**gamma * dist**beta``
``powerlog_time``  ``alpha * time**gamma - beta * log(time)``
``powerlog_dist``  ``alpha * dist**gamma - beta * log(dist)``
=================  =========================================

Inputs are clamped from below by ``clamp`` (default 1.0) before any power or
logarithm, so zero entries cannot poison the kernel and logarithms stay
nonnegative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CostMatrix, ValidationError

DEFAULT_CLAMP = 1.0

PARAM_NAMES = ("alpha", "beta", "gamma")
NEUTRAL = {"beta": 0.0, "gamma": 1.0}

# parameters each family actually uses, in grid order
FAMILY_PARAMS = {
    "linear_time": ("alpha",),
    "power_time": ("alpha", "gamma"),
    "power_time_dist": ("alpha", "beta", "gamma"),
    "powerlog_time": ("alpha", "beta", "gamma"),
    "powerlog_dist": ("alpha", "beta", "gamma"),
}
FAMILIES = tuple(FAMILY_PARAMS)


@dataclass(frozen=True)
class CostFamily:
    """A cost family together with a parameter vector.

    Parameters a family does not use are pinned to their neutral values
    (``beta = 0``, ``gamma = 1``).
    """

    kind: str
    alpha: float
    beta: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILY_PARAMS:
            raise ValidationError(f"unknown cost family {self.kind!r}; choose from {', '.join(FAMILIES)}")
        used = FAMILY_PARAMS[self.kind]
        for name in ("beta", "gamma"):
            if name not in used:
                object.__setattr__(self, name, NEUTRAL[name])
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise ValidationError("beta and gamma must be nonnegative")

    @classmethod
    def from_eta(cls, kind: str, eta) -> "CostFamily":
        return cls(kind, *eta)

    @property
    def eta(self) -> tuple:
        return (self.alpha, self.beta, self.gamma)

    @property
    def free_params(self) -> tuple:
        return FAMILY_PARAMS[self.kind]


def evaluate_family(fam: CostFamily, time, dist=None, clamp: float = DEFAULT_CLAMP) -> CostMatrix:
    """Evaluate ``fam`` entrywise on the time and distance matrices.

    ``dist`` may be omitted for families that only use time.
    """
    time = np.asarray(time, dtype=float)
    if dist is None:
        if fam.kind in ("power_time_dist", "powerlog_dist"):
            raise ValidationError(f"{fam.kind} needs a distance matrix")
        dist = np.ones_like(time)
    dist = np.asarray(dist, dtype=float)
    if time.shape != dist.shape:
        raise ValidationError(f"time and dist shapes differ: {time.shape} vs {dist.shape}")
    if np.any(time < 0) or np.any(dist < 0):
        raise ValidationError("time and distance must be nonnegative")
    if not clamp > 0:
        raise ValidationError("clamp must be positive")
    tm = np.maximum(time, clamp)
    ds = np.maximum(dist, clamp)
    a, b, g = fam.eta
    if fam.kind == "linear_time":
        t = a * tm
    elif fam.kind == "power_time":
        t = a * tm**g
    elif fam.kind == "power_time_dist":
        t = a * tm**g * ds**b
    elif fam.kind == "powerlog_time":
        t = a * tm**g - b * np.log(tm)
    else:
        t = a * ds**g - b * np.log(ds)
    assert np.all(np.isfinite(t)), "non-finite cost after clamping"
    return CostMatrix(t)


@dataclass(frozen=True)
class ParamRange:
    lower: float
    upper: float
    step: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper) and math.isfinite(self.step)):
            raise ValidationError("grid bounds must be finite")
        if self.lower > self.upper:
            raise ValidationError(f"empty range: lower {self.lower} > upper {self.upper}")
        if not self.step > 0:
            raise ValidationError("grid step must be positive")

    @classmethod
    def parse(cls, text: str) -> "ParamRange":
        """Parse ``"lo:hi:step"``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"expected lo:hi:step, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError:
            raise ValidationError(f"non-numeric grid range {text!r}") from None

    def values(self) -> list:
        count = math.floor((self.upper - self.lower) / self.step + 1e-9) + 1
        # multiply instead of accumulating, and round so 0.076 prints as 0.076
        return [round(self.lower + k * self.step, 12) for k in range(count)]


@dataclass(frozen=True)
class GridSpec:
    """Swept ranges and fixed values for ``alpha``, ``beta`` and ``gamma``.

    A parameter is either swept (a :class:`ParamRange` in ``ranges``) or
    fixed (a float in ``fixed``). Parameters in neither default to their
    neutral value; ``alpha`` has no neutral value and must be given.
    """

    ranges: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in list(self.ranges) + list(self.fixed):
            if name not in PARAM_NAMES:
                raise ValidationError(f"unknown parameter {name!r}")
        both = set(self.ranges) & set(self.fixed)
        if both:
            raise ValidationError(f"parameters both swept and fixed: {sorted(both)}")
        if "alpha" not in self.ranges and "alpha" not in self.fixed:
            raise ValidationError("alpha must be swept or fixed")

    @property
    def swept(self) -> tuple:
        return tuple(p for p in PARAM_NAMES if p in self.ranges)

    def axis(self, name: str) -> list:
        if name in self.ranges:
            return self.ranges[name].values()
        if name in self.fixed:
            return [float(self.fixed[name])]
        return [NEUTRAL[name]]

    def bounds(self, name: str) -> tuple:
        if name in self.ranges:
            r = self.ranges[name]
            return (r.lower, r.upper)
        v = self.axis(name)[0]
        return (v, v)


def family_grid(spec: GridSpec) -> list:
    """All ``(alpha, beta, gamma)`` points of ``spec``, alpha varying slowest."""
    points = list(itertools.product(*(spec.axis(p) for p in PARAM_NAMES)))
    if not points:
        raise ValidationError("empty grid")
    return points
