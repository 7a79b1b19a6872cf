"""
Survey ingestion and synthetic data.

The survey is a five-column CSV, one row per ordered zone pair::

    zone_i, zone_j, commuters, avg_time_min, avg_dist_km

An optional header row is recognised by a non-numeric first field. Parsing
errors carry the offending line number.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .core import (
    COUNTS,
    CorrespondenceMatrix,
    Marginals,
    ODError,
    SolverConfig,
    SolverError,
    ValidationError,
    make_marginals,
    to_counts,
)
from .costs import CostFamily, evaluate_family

HEADER = ("zone_i", "zone_j", "commuters", "avg_time", "avg_dist")

# provenance codes for time/dist entries
OBSERVED, SYMMETRIC, ROW_COL_MEAN, GLOBAL_MEAN = 0, 1, 2, 3

Record = namedtuple("Record", "zone_i zone_j commuters avg_time avg_dist")


class SurveyFormatError(ODError, ValueError):
    """Malformed survey file. ``line`` is the 1-based line number, if known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SurveyValueError(SurveyFormatError, ValidationError):
    """Well-formed row with an invalid value (negative entry, duplicate pair)."""


def _zone_id(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return text


def _zone_key(z):
    # ints before strings, each in natural order
    return (isinstance(z, str), z)


@dataclass(frozen=True)
class ObservationTable:
    records: tuple
    zones: tuple

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if min(r.commuters, r.avg_time, r.avg_dist) < 0:
                raise ValidationError(f"negative value in record {r}")
            key = (r.zone_i, r.zone_j)
            if key in seen:
                raise ValidationError(f"duplicate zone pair {key}")
            seen.add(key)

    @classmethod
    def from_records(cls, records) -> "ObservationTable":
        records = tuple(Record(*r) for r in records)
        zones = sorted({z for r in records for z in (r.zone_i, r.zone_j)}, key=_zone_key)
        return cls(records, tuple(zones))

    @property
    def index(self) -> dict:
        return {z: k for k, z in enumerate(self.zones)}

    def __len__(self):
        return len(self.records)


def _parse_number(text, what, line):
    try:
        value = float(text)
    except ValueError:
        raise SurveyFormatError(f"non-numeric {what} {text.strip()!r}", line) from None
    if not np.isfinite(value):
        raise SurveyFormatError(f"non-finite {what}", line)
    if value < 0:
        raise SurveyValueError(f"negative {what} {value}", line)
    return value


def load_survey_csv(source) -> ObservationTable:
    """Read a survey CSV from a path, an open text file, or a string of CSV text."""
    if isinstance(source, (str, os.PathLike)) and (not isinstance(source, str) or "\n" not in source):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read(fh)
    if isinstance(source, str):
        return _read(io.StringIO(source))
    return _read(source)


def _read(fh) -> ObservationTable:
    records = []
    seen = {}
    first = True
    for line, row in enumerate(csv.reader(fh), start=1):
        if not row or all(not f.strip() for f in row):
            continue
        if first:
            first = False
            try:
                float(row[0])
            except ValueError:
                # string zone ids are legal, so also require non-numeric value fields
                if _looks_like_header(row):
                    continue
        if len(row) != 5:
            raise SurveyFormatError(f"expected 5 fields, got {len(row)}", line)
        zi, zj = _zone_id(row[0]), _zone_id(row[1])
        if zi == "" or zj == "":
            raise SurveyFormatError("empty zone id", line)
        count = _parse_number(row[2], "commuter count", line)
        t = _parse_number(row[3], "travel time", line)
        dd = _parse_number(row[4], "distance", line)
        key = (zi, zj)
        if key in seen:
            raise SurveyValueError(f"duplicate zone pair {zi},{zj} (first seen on line {seen[key]})", line)
        seen[key] = line
        records.append(Record(zi, zj, count, t, dd))
    return ObservationTable.from_records(records)


def _looks_like_header(row):
    for f in row[2:]:
        try:
            float(f)
            return False
        except ValueError:
            pass
    return True


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def write_survey_csv(table: ObservationTable, dest, header: bool = True) -> None:
    """Write ``table`` in the five-column survey format (LF line endings)."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(HEADER)
        for r in table.records:
            w.writerow([r.zone_i, r.zone_j, _fmt(r.commuters), _fmt(r.avg_time), _fmt(r.avg_dist)])

    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            emit(fh)
    else:
        emit(dest)


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything the solvers and the calibration need, on a common zone index.

    ``provenance`` codes how each time/dist entry was obtained: observed (0),
    copied from the reverse pair (1), row/column mean (2) or global mean (3).
    """

    zones: tuple
    marginals: Marginals
    d_obs: CorrespondenceMatrix
    time: np.ndarray
    dist: np.ndarray
    provenance: np.ndarray
    dropped: tuple = ()
    source_only: tuple = ()
    sink_only: tuple = ()

    @property
    def n(self) -> int:
        return len(self.zones)

    @property
    def total(self) -> float:
        return self.d_obs.total

    def has_empty_marginals(self) -> bool:
        return bool(np.any(self.marginals.l == 0) or np.any(self.marginals.w == 0))

    def to_dict(self) -> dict:
        return {
            "zones": list(self.zones),
            "total": self.total,
            "l": self.marginals.l.tolist(),
            "w": self.marginals.w.tolist(),
            "d_obs": self.d_obs.d.tolist(),
            "time": self.time.tolist(),
            "dist": self.dist.tolist(),
            "provenance": self.provenance.tolist(),
            "dropped": list(self.dropped),
            "source_only": list(self.source_only),
            "sink_only": list(self.sink_only),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Problem":
        total = float(obj["total"])
        return cls(
            zones=tuple(obj["zones"]),
            marginals=Marginals(obj["l"], obj["w"], total),
            d_obs=CorrespondenceMatrix(obj["d_obs"], COUNTS, total),
            time=_readonly(obj["time"]),
            dist=_readonly(obj["dist"]),
            provenance=_readonly(obj["provenance"], int),
            dropped=tuple(obj.get("dropped", ())),
            source_only=tuple(obj.get("source_only", ())),
            sink_only=tuple(obj.get("sink_only", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Problem":
        return cls.from_dict(json.loads(text))

    def to_table(self) -> ObservationTable:
        """Observed records back as a table (pairs with observed time/dist)."""
        recs = []
        for i, zi in enumerate(self.zones):
            for j, zj in enumerate(self.zones):
                if self.provenance[i, j] == OBSERVED:
                    recs.append(Record(zi, zj, float(self.d_obs.d[i, j]),
                                       float(self.time[i, j]), float(self.dist[i, j])))
        return ObservationTable.from_records(recs)

    def __eq__(self, other):
        if not isinstance(other, Problem):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _readonly(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _impute(values, observed):
    """Fill unobserved entries; returns (filled, provenance)."""
    n = values.shape[0]
    out = np.where(observed, values, 0.0)
    prov = np.where(observed, OBSERVED, -1)
    global_mean = values[observed].mean()
    for i in range(n):
        for j in range(n):
            if observed[i, j]:
                continue
            if observed[j, i]:
                out[i, j] = values[j, i]
                prov[i, j] = SYMMETRIC
                continue
            around = np.concatenate([values[i, observed[i]], values[observed[:, j], j]])
            if around.size:
                out[i, j] = around.mean()
                prov[i, j] = ROW_COL_MEAN
            else:
                out[i, j] = global_mean
                prov[i, j] = GLOBAL_MEAN
    return out, prov


def build_problem(table: ObservationTable) -> Problem:
    """Assemble marginals, the observed count matrix and complete time/dist matrices.

    Zones that neither send nor receive commuters are dropped. Zones that
    only send (or only receive) are kept but listed in ``source_only``
    (``sink_only``); the solvers reject them until they are removed.
    """
    if len(table) == 0:
        raise ValidationError("empty observation table")
    idx = table.index
    n0 = len(table.zones)
    counts = np.zeros((n0, n0))
    time = np.zeros((n0, n0))
    dist = np.zeros((n0, n0))
    seen = np.zeros((n0, n0), dtype=bool)
    for r in table.records:
        i, j = idx[r.zone_i], idx[r.zone_j]
        counts[i, j] = r.commuters
        time[i, j] = r.avg_time
        dist[i, j] = r.avg_dist
        seen[i, j] = True

    L = counts.sum(axis=1)
    W = counts.sum(axis=0)
    keep = (L > 0) | (W > 0)
    dropped = tuple(z for z, k in zip(table.zones, keep) if not k)
    zones = tuple(z for z, k in zip(table.zones, keep) if k)
    sel = np.flatnonzero(keep)
    counts = counts[np.ix_(sel, sel)]
    time, dist, seen = (a[np.ix_(sel, sel)] for a in (time, dist, seen))
    if len(zones) < 2:
        raise ValidationError("need at least 2 zones with commuters")
    L = counts.sum(axis=1)
    W = counts.sum(axis=0)
    N = counts.sum()

    time_f, prov = _impute(time, seen)
    dist_f, _ = _impute(dist, seen)

    if np.all(counts == np.round(counts)):
        marginals = make_marginals(L, W)
    else:
        # fractional counts: both sums come from the same matrix, so only
        # summation order separates them
        l, w = L / N, W / N
        marginals = Marginals(l / l.sum(), w / w.sum(), N)

    return Problem(
        zones=zones,
        marginals=marginals,
        d_obs=CorrespondenceMatrix(counts, COUNTS, N),
        time=_readonly(time_f),
        dist=_readonly(dist_f),
        provenance=_readonly(prov, int),
        dropped=dropped,
        source_only=tuple(z for z, a, b in zip(zones, L, W) if a > 0 and b == 0),
        sink_only=tuple(z for z, a, b in zip(zones, L, W) if a == 0 and b > 0),
    )


def largest_remainder(x, total: int) -> np.ndarray:
    """Round the nonnegative array ``x`` (summing to ``total``) to integers with the same sum."""
    flat = np.asarray(x, dtype=float).ravel()
    base = np.floor(flat)
    short = int(round(total - base.sum()))
    if short > 0:
        # stable sort so ties go to the lowest flat index
        order = np.argsort(-(flat - base), kind="stable")
        base[order[:short]] += 1
    return base.reshape(np.shape(x))


@dataclass(frozen=True, eq=False)
class SyntheticInstance:
    time: np.ndarray
    dist: np.ndarray
    L: np.ndarray
    W: np.ndarray
    d: np.ndarray  # model output at count scale, before rounding


def synthetic_instance(n, seed, family: CostFamily, N, cfg: SolverConfig | None = None) -> SyntheticInstance:
    """Draw a random city and solve the entropy model on it.

    Travel times are U[5, 90] minutes and distances U[1, 40] km, both
    symmetric. Departure and arrival totals are random positive vectors
    scaled to ``N``.
    """
    from .solvers import sinkhorn_solve

    if int(n) != n or n < 2:
        raise ValidationError("n must be an integer >= 2")
    if not N > 0:
        raise ValidationError("N must be positive")
    n = int(n)
    rng = np.random.default_rng(seed)
    time = rng.uniform(5.0, 90.0, (n, n))
    time = np.triu(time) + np.triu(time, 1).T
    dist = rng.uniform(1.0, 40.0, (n, n))
    dist = np.triu(dist) + np.triu(dist, 1).T
    pl = rng.uniform(0.5, 1.5, n)
    pw = rng.uniform(0.5, 1.5, n)
    marg = Marginals(pl / pl.sum(), pw / pw.sum(), N)
    T = evaluate_family(family, time, dist)
    d, _, report = sinkhorn_solve(T, marg, cfg or SolverConfig(eps_f=1e-12, eps_eq=1e-12))
    if not report.converged:
        raise SolverError(f"synthetic solve did not converge at {family}")
    return SyntheticInstance(time, dist, N * marg.l, N * marg.w, to_counts(d, N).d)


def generate_synthetic(n, seed, family: CostFamily, N, rounding: bool = True,
                       cfg: SolverConfig | None = None) -> ObservationTable:
    """Synthetic survey table generated by the entropy model itself.

    With ``rounding=True`` (the default) the count matrix is rounded to
    integers by the largest-remainder method, preserving the total ``N``,
    and only pairs with a positive count are emitted. With ``rounding=False``
    the exact model counts are emitted for every pair, which gives a
    noiseless table for closed-loop tests.
    """
    inst = synthetic_instance(n, seed, family, N, cfg)
    if rounding:
        if float(N) != int(N):
            raise ValidationError("integer rounding needs an integer N")
        counts = largest_remainder(inst.d, int(N))
    else:
        counts = inst.d
    records = []
    for i in range(inst.d.shape[0]):
        for j in range(inst.d.shape[1]):
            if counts[i, j] > 0:
                records.append(Record(i + 1, j + 1, float(counts[i, j]),
                                      float(inst.time[i, j]), float(inst.dist[i, j])))
    return ObservationTable.from_records(records)
