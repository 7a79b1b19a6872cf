"""
Command-line interface.

Subcommands: ``solve``, ``calibrate``, ``sweep``, ``synth`` and ``report``.
Every command writes a ``manifest.json`` (or ``<file>.manifest.json``)
describing how its outputs were produced.

Exit codes: 0 success, 1 I/O or parse error, 2 validation error,
3 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import DIVISORS, METHODS, AnnealingSchedule, CalibrationResult, calibrate
from .core import (
    CostMatrix,
    ODError,
    SolverConfig,
    SolverError,
    ValidationError,
    to_counts,
)
from .costs import FAMILIES, FAMILY_PARAMS, PARAM_NAMES, CostFamily, GridSpec, ParamRange, evaluate_family
from .data import Problem, SurveyFormatError, build_problem, generate_synthetic, load_survey_csv, write_survey_csv
from .solvers import SOLVERS, solve

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NOT_CONVERGED = 0, 1, 2, 3

# sweep used when a family's alpha gets no range or value on the command line
DEFAULT_ALPHA_RANGE = "0.01:1:0.001"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _config(args):
    skip = {"func", "command"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def write_manifest(path, args, inputs, started):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "config": _config(args),
        "tool": "odcalib",
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    Path(path).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _write_matrix(path, m, labels=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if labels is not None:
            w.writerow([""] + list(labels))
        for k, row in enumerate(np.asarray(m)):
            cells = [repr(float(v)) for v in row]
            w.writerow(([labels[k]] if labels is not None else []) + cells)


def _read_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise SurveyFormatError(f"{path}: {exc}") from None


def _load_problem(path) -> Problem:
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            return Problem.from_json(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, KeyError) as exc:
            raise SurveyFormatError(f"{path}: not a problem bundle ({exc})") from None
    return build_problem(load_survey_csv(path))


def _family(args) -> CostFamily:
    if args.alpha is None:
        raise ValidationError("--alpha is required")
    return CostFamily(args.family, args.alpha,
                      0.0 if args.beta is None else args.beta,
                      1.0 if args.gamma is None else args.gamma)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(eps_f=args.eps_f, eps_eq=args.eps_eq, max_iters=args.max_iters,
                        initial_L=args.initial_L)


def cmd_solve(args) -> int:
    started = time.perf_counter()
    problem = _load_problem(args.input)
    if problem.has_empty_marginals():
        raise ValidationError("zones with zero departures or arrivals; drop them first")
    if args.cost_matrix is not None:
        T = CostMatrix(_read_matrix(args.cost_matrix))
        if T.n != problem.n:
            raise ValidationError(f"cost matrix is {T.n}x{T.n}, problem has {problem.n} zones")
    else:
        T = evaluate_family(_family(args), problem.time, problem.dist)
    d, lam, report = solve(T, problem.marginals, _solver_config(args), args.solver)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = [str(z) for z in problem.zones]
    _write_matrix(out / "d_normalized.csv", d.d, labels)
    _write_matrix(out / "d_counts.csv", to_counts(d, problem.total).d, labels)
    (out / "potentials.json").write_text(json.dumps(
        {"zones": list(problem.zones), "lambda_l": lam.lambda_l.tolist(), "lambda_w": lam.lambda_w.tolist()},
        indent=1) + "\n", encoding="utf-8")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    inputs = [args.input] + ([args.cost_matrix] if args.cost_matrix else [])
    write_manifest(out / "manifest.json", args, inputs, started)
    status = "converged" if report.converged else "did NOT converge"
    print(f"{args.solver}: {status} after {report.iterations} iterations "
          f"(gap {report.final_gap:.3g}, row {report.row_violation:.3g}, col {report.col_violation:.3g})")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _grid_spec(args, family) -> GridSpec:
    ranges, fixed = {}, {}
    for p in PARAM_NAMES:
        rng = getattr(args, f"grid_{p}")
        val = getattr(args, p)
        if rng is not None and val is not None:
            raise ValidationError(f"give either --{p} or --grid-{p}, not both")
        if p not in FAMILY_PARAMS[family]:
            continue
        if rng is not None:
            ranges[p] = ParamRange.parse(rng)
        elif val is not None:
            fixed[p] = val
    if "alpha" not in ranges and "alpha" not in fixed:
        ranges["alpha"] = ParamRange.parse(DEFAULT_ALPHA_RANGE)
    return GridSpec(ranges, fixed)


def _families(names):
    if not names:
        raise ValidationError("--family is required")
    if "all" in names:
        return list(FAMILIES)
    for n in names:
        if n not in FAMILIES:
            raise ValidationError(f"unknown family {n!r}; choose from {', '.join(FAMILIES)} or all")
    return list(dict.fromkeys(names))


def cmd_calibrate(args) -> int:
    started = time.perf_counter()
    problem = _load_problem(args.input)
    cfg = _solver_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = AnnealingSchedule(T0=args.T0, factor=args.cooling, steps=args.steps_per_temp,
                                 n_temperatures=args.n_temps, step=args.step, seed=args.seed)
    rows = []
    for family in _families(args.family):
        spec = _grid_spec(args, family)
        result = calibrate(problem, family, spec, method=args.method, cfg=cfg, solver=args.solver,
                           normalized=args.normalized_residual, divisor=args.divisor, jobs=args.jobs,
                           schedule=schedule, lipschitz=args.lipschitz, tol=args.tol,
                           starts=args.starts, seed=args.seed)
        (out / f"calibration_{family}.json").write_text(result.to_json(), encoding="utf-8")
        (out / f"sweep_{family}.csv").write_text(result.to_csv(), encoding="utf-8")
        rows.append(result)
    write_manifest(out / "manifest.json", args, [args.input], started)
    print(format_table(rows), end="")
    return EXIT_OK


def format_table(results, flags=None) -> str:
    flags = flags or [""] * len(results)
    lines = [f"{'family':<16} {'residual':>14}  {'alpha':>10} {'beta':>8} {'gamma':>8}  {'n':>3}  note"]
    for r, flag in zip(results, flags):
        a, b, g = r.best_eta
        lines.append(f"{r.family:<16} {r.best_residual:>14.6g}  {a:>10.6g} {b:>8.4g} {g:>8.4g}  {r.n:>3}  {flag}".rstrip())
    return "\n".join(lines) + "\n"


def report_rows(results):
    """Sort results by residual and flag duplicate families; returns (results, flags, warnings)."""
    order = sorted(range(len(results)), key=lambda k: (results[k].best_residual, k))
    ordered = [results[k] for k in order]
    counts = {}
    for r in ordered:
        counts[r.family] = counts.get(r.family, 0) + 1
    flags = ["duplicate family" if counts[r.family] > 1 else "" for r in ordered]
    warnings = []
    ns = sorted({r.n for r in ordered})
    if len(ns) > 1:
        warnings.append(f"results come from problems of different sizes n={ns}")
    return ordered, flags, warnings


def cmd_report(args) -> int:
    results = []
    for path in args.results:
        try:
            results.append(CalibrationResult.from_json(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError) as exc:
            raise SurveyFormatError(f"{path}: not a calibration result ({exc})") from None
    ordered, flags, warnings = report_rows(results)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(format_table(ordered, flags), end="")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "residual", "alpha", "beta", "gamma", "n", "method", "flag"])
        for r, flag in zip(ordered, flags):
            w.writerow([r.family, repr(r.best_residual)] + [repr(float(v)) for v in r.best_eta]
                       + [r.n, r.method, flag])
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    started = time.perf_counter()
    if args.n < 2:
        raise ValidationError("n must be at least 2")
    table = generate_synthetic(args.n, args.seed, _family(args), args.N, rounding=not args.no_rounding)
    out = Path(args.out)
    if out.parent:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_survey_csv(table, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), args, [], started)
    print(f"wrote {len(table)} records for {args.n} zones to {out}")
    return EXIT_OK


def _add_solver_flags(p):
    p.add_argument("--solver", choices=sorted(SOLVERS), default="sinkhorn")
    p.add_argument("--eps-f", type=float, default=1e-8, help="duality-gap tolerance")
    p.add_argument("--eps-eq", type=float, default=1e-8, help="marginal-violation tolerance")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--initial-L", type=float, default=1.0, help="starting Lipschitz estimate (accelerated)")


def _add_param_flags(p, grids=False):
    for name in PARAM_NAMES:
        p.add_argument(f"--{name}", type=float, default=None)
        if grids:
            p.add_argument(f"--grid-{name}", metavar="LO:HI:STEP", default=None)


def _add_calibrate_flags(p, method=True):
    p.add_argument("input", help="survey CSV or problem bundle JSON")
    p.add_argument("--family", action="append", help="cost family (repeatable) or 'all'")
    _add_param_flags(p, grids=True)
    if method:
        p.add_argument("--method", choices=METHODS, default="grid")
    p.add_argument("--normalized-residual", action=argparse.BooleanOptionalAction, default=True,
                   help="divide the residual by n^2 (default) or by the observed-pair count")
    p.add_argument("--divisor", choices=DIVISORS, default="n2")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_solver_flags(p)
    if method:
        g = p.add_argument_group("search methods")
        g.add_argument("--lipschitz", type=float, default=None, help="Lipschitz constant (piyavskii)")
        g.add_argument("--tol", type=float, default=1e-6, help="optimality tolerance (piyavskii)")
        g.add_argument("--starts", type=int, default=10, help="number of random starts (multistart)")
        g.add_argument("--T0", type=float, default=1.0, help="initial temperature (anneal)")
        g.add_argument("--cooling", type=float, default=0.9, help="cooling factor (anneal)")
        g.add_argument("--steps-per-temp", type=int, default=50)
        g.add_argument("--n-temps", type=int, default=100)
        g.add_argument("--step", type=float, default=None, help="proposal half-width (anneal)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odcalib", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"odcalib {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute the correspondence matrix for one parameter vector")
    p.add_argument("input", help="survey CSV or problem bundle JSON")
    p.add_argument("--family", choices=FAMILIES, default="linear_time")
    _add_param_flags(p)
    p.add_argument("--cost-matrix", default=None, help="n x n cost CSV; overrides --family")
    p.add_argument("--out", required=True, help="output directory")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("calibrate", help="fit cost-family parameters to a survey")
    _add_calibrate_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="evaluate the residual on a parameter grid")
    _add_calibrate_flags(p, method=False)
    p.set_defaults(func=cmd_calibrate, method="grid", lipschitz=None, tol=1e-6, starts=10,
                   T0=1.0, cooling=0.9, steps_per_temp=50, n_temps=100, step=None)

    p = sub.add_parser("synth", help="write a synthetic survey generated by the model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=FAMILIES, required=True)
    _add_param_flags(p)
    p.add_argument("--N", type=float, default=1965)
    p.add_argument("--no-rounding", action="store_true", help="emit exact model counts instead of integers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="compare calibration results")
    p.add_argument("results", nargs="+")
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SurveyFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ODError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
