"""Command-line interface.

Exit codes: 0 success, 1 hypothesis failure / non-convergence / domain
violation, 2 usage or parse error, 3 barrier or bracket violation.
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time
from pathlib import Path

import numpy as np

from .assembly import discretize, make_grid
from .barriers import BracketError, build_bracket
from .discretization import DiscreteField, RectGrid
from .expr import ExpressionError
from .global_solver import (
    BarrierError,
    RadialBarrier,
    decay_fit,
    default_schedule,
    epsilon_continuation,
    exhaust,
)
from .persistence import FieldFileError, RunManifest, atomic_write_text, fmt, read_field, write_field
from .problem import FieldEvaluationError, ProblemFileError, check_assumptions, load_problem
from .transforms import TransformError, TransformSpec, forward_map, inverse_map, round_trip_error, verify_transform_residual
from .truncated import TruncatedSolveOptions

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BARRIER = 0, 1, 2, 3

DEFAULTS = {
    "grid_nodes": None,
    "radius": None,
    "epsilon_start": None,
    "epsilon_floor": None,
    "tol_residual": 1e-10,
    "tol_cauchy": 1e-6,
    "tol_exhaust": 1e-5,
    "schedule": None,
    "mode": "eigen",
    "k_max": 4,
}
_CASTS = {
    "grid_nodes": int,
    "radius": float,
    "epsilon_start": float,
    "epsilon_floor": float,
    "tol_residual": float,
    "tol_cauchy": float,
    "tol_exhaust": float,
    "schedule": str,
    "mode": str,
    "k_max": int,
}


def _version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # not installed
        return "0+local"


class UsageError(Exception):
    pass


def _read_config(path):
    """``key = value`` lines (no section header needed)."""
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        parser.read_string("[run]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"config {path}: {exc}") from None
    out = {}
    for key, val in parser["run"].items():
        key = key.replace("-", "_")
        if key not in _CASTS:
            raise UsageError(f"config {path}: unknown key {key!r}")
        try:
            out[key] = _CASTS[key](val)
        except ValueError:
            raise UsageError(f"config {path}: bad value for {key}: {val!r}") from None
    return out


def _resolve(args):
    """flags > config file > defaults."""
    cfg = _read_config(getattr(args, "config", None))
    opts = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        opts[key] = flag if flag is not None else cfg.get(key, default)
    if opts["mode"] not in ("eigen", "poisson", "combined"):
        raise UsageError(f"unknown mode {opts['mode']!r}")
    return opts


def _floats(text, what):
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad {what} list {text!r}") from None
    if not vals:
        raise UsageError(f"empty {what} list")
    return vals


def _load(path):
    try:
        return load_problem(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _manifest(command, args, problem, options, verdicts, t0):
    return RunManifest(
        command=command,
        problem_path=str(args.problem) if getattr(args, "problem", None) else None,
        problem_hash=problem.content_hash() if problem is not None else None,
        options={k: v for k, v in options.items() if v is not None},
        verdicts=verdicts,
        version=_version(),
        duration=time.perf_counter() - t0,
    )


# ------------------------------------------------------------------ commands


def cmd_check(args):
    problem = _load(args.problem)
    report = check_assumptions(problem)
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        rows = [f"{k}={v}" for k, v in report.to_dict().items()]
        atomic_write_text(out / "check.txt", "\n".join(rows) + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_solve_bounded(args):
    t0 = time.perf_counter()
    opts = _resolve(args)
    problem = _load(args.problem)
    if not problem.domain.bounded:
        raise UsageError("solve-bounded needs a ball or rect domain; use solve-global for wholespace")
    n = opts["grid_nodes"] or (513 if problem.dim != 2 or problem.radial else 65)
    opts["grid_nodes"] = n
    grid = make_grid(problem, n, radius=opts["radius"])
    disc = discretize(problem, grid)
    if opts["schedule"]:
        schedule = _floats(opts["schedule"], "epsilon")
    else:
        schedule = default_schedule(20, floor=opts["epsilon_floor"], start=opts["epsilon_start"])
    if not schedule:
        raise UsageError("the epsilon schedule is empty after applying start/floor")
    solve_opts = TruncatedSolveOptions(tol_residual=opts["tol_residual"])
    out = Path(args.out)
    try:
        bracket = build_bracket(disc, epsilon=schedule[0], mode=opts["mode"])
    except BracketError as exc:
        print(f"bracket: {exc}", file=sys.stderr)
        _manifest("solve-bounded", args, problem, opts, {"bracket": "violated"}, t0).write(out)
        return EXIT_BARRIER
    for unused in ("k_max", "tol_exhaust"):
        opts.pop(unused)
    u, trace = epsilon_continuation(
        disc, schedule=schedule, opts=solve_opts, tol_cauchy=opts["tol_cauchy"], bracket=bracket
    )
    write_field(out / "solution.field", u)
    write_field(out / "sub.field", bracket.sub)
    write_field(out / "super.field", bracket.super)
    atomic_write_text(out / "bracket.txt", bracket.manifest())
    atomic_write_text(out / "continuation.csv", trace.csv_rows())
    atomic_write_text(out / "newton.csv", trace.reports[-1].csv_rows())
    ok = trace.verdict in ("converged", "floor-reached") and bool(trace.limit_bracket_ok)
    last = trace.reports[-1]
    verdicts = {
        "continuation": trace.verdict,
        "final_epsilon": fmt(trace.epsilons[-1]),
        "final_residual": fmt(last.final_residual),
        "last_supdiff": fmt(trace.supdiffs[-1]) if trace.supdiffs else "n/a",
        "limit_bracket": "ok" if trace.limit_bracket_ok else "violated",
        "sigma1": fmt(bracket.sigma1),
        "status": "ok" if ok else "failed",
    }
    _manifest("solve-bounded", args, problem, opts, verdicts, t0).write(out)
    print(f"continuation: {trace.verdict} after {len(trace.epsilons)} eps steps (final eps {trace.epsilons[-1]:.3g})")
    print(f"final residual {last.final_residual:.3e}; max u = {float(np.max(u.values)):.12g}")
    return EXIT_OK if ok else EXIT_FAIL


def _barrier_radii(text):
    if text:
        return np.array(sorted(set(_floats(text, "radius"))))
    return np.concatenate([[0.0], np.geomspace(1e-2, 1e4, 121)])


def _write_barrier(out, barrier, radii, nested):
    w = barrier.w(radii)
    rows = ["r,w" + (",w_nested" if nested else "")]
    wn = barrier.w_nested(radii) if nested else None
    for i, r in enumerate(radii):
        rows.append(f"{fmt(r)},{fmt(w[i])}" + (f",{fmt(wn[i])}" if nested else ""))
    atomic_write_text(Path(out) / "barrier.csv", "\n".join(rows) + "\n")
    return w, wn


def cmd_barrier(args):
    t0 = time.perf_counter()
    problem = _load(args.problem)
    if problem.dim <= 2:
        raise UsageError("the barrier needs dim > 2")
    barrier = RadialBarrier.from_problem(problem)
    radii = _barrier_radii(args.radii)
    w, wn = _write_barrier(args.out, barrier, radii, nested=True)
    disagreement = float(np.max(np.abs(w - wn)) / barrier.K) if barrier.K > 0 else 0.0
    bound_ok = barrier.check_bound(radii)
    verdicts = {"K": fmt(barrier.K), "bound": "ok" if bound_ok else "violated", "closed_vs_nested": fmt(disagreement)}
    _manifest("barrier", args, problem, {}, verdicts, t0).write(args.out)
    print(f"K = {barrier.K:.17g}")
    print(f"max |w - w_nested| / K = {disagreement:.3e}; w <= K: {'yes' if bound_ok else 'NO'}")
    return EXIT_OK if bound_ok else EXIT_BARRIER


def cmd_solve_global(args):
    t0 = time.perf_counter()
    opts = _resolve(args)
    problem = _load(args.problem)
    if problem.domain.kind != "wholespace":
        raise UsageError("solve-global needs a wholespace problem")
    out = Path(args.out)
    report = check_assumptions(problem)
    if not report.passed:
        print(report.to_text())
        _manifest("solve-global", args, problem, opts, {"assumptions": "failed"}, t0).write(out)
        return EXIT_FAIL
    barrier = RadialBarrier.from_problem(problem)
    if args.barrier_only:
        _write_barrier(out, barrier, _barrier_radii(None), nested=False)
        _manifest("solve-global", args, problem, {"barrier_only": True}, {"K": fmt(barrier.K)}, t0).write(out)
        print(f"K = {barrier.K:.17g}")
        return EXIT_OK
    if opts["schedule"]:
        radii = _floats(opts["schedule"], "radius")
    else:
        R0 = opts["radius"] or 2.0
        radii = [R0 * 2.0**k for k in range(opts["k_max"] + 1)]
    opts["schedule"] = ",".join(fmt(r) for r in radii)
    npu = opts["grid_nodes"] or 64
    opts["grid_nodes"] = npu
    eps_schedule = default_schedule(20, floor=opts["epsilon_floor"], start=opts["epsilon_start"])
    solve_opts = TruncatedSolveOptions(tol_residual=opts["tol_residual"])
    try:
        sol = exhaust(
            problem, radii, solve_opts, nodes_per_unit=npu, tol_exhaust=opts["tol_exhaust"],
            tol_cauchy=opts["tol_cauchy"], schedule=eps_schedule, mode=opts["mode"], barrier=barrier,
        )
    except BarrierError as exc:
        print(f"barrier violation: {exc}", file=sys.stderr)
        _manifest("solve-global", args, problem, opts, {"barrier": "violated"}, t0).write(out)
        return EXIT_BARRIER
    except BracketError as exc:
        print(f"bracket: {exc}", file=sys.stderr)
        _manifest("solve-global", args, problem, opts, {"bracket": "violated"}, t0).write(out)
        return EXIT_BARRIER
    for b in sol.balls:
        write_field(out / f"ball_{b.k:02d}.field", b.u)
    atomic_write_text(out / "trace.csv", sol.trace_rows())
    atomic_write_text(out / "decay.csv", sol.decay_rows())
    verdicts = {
        "assumptions": "passed",
        "exhaustion": sol.verdict,
        "barrier_margin_min": fmt(sol.barrier_margin),
        "K": fmt(barrier.K),
        "final_bracket": "ok" if all(b.bracket_ok for b in sol.balls) else "violated",
    }
    mu = report.mu_estimate
    if mu is not None and report.mu_verdict == "admissible" and sol.final.grid.R >= 10 * sol.R0:
        try:
            fit = decay_fit(sol, mu)
        except ValueError as exc:
            verdicts["decay_fit"] = f"refused ({exc})"
        else:
            atomic_write_text(out / "decay_fit.txt", fit.to_text() + "\n")
            verdicts["decay_slope"] = fmt(fit.slope)
            verdicts["decay_predicted"] = fmt(fit.predicted)
            print(fit.to_text())
    else:
        verdicts["decay_fit"] = "not asserted (mu unavailable or inadmissible)"
    ok = sol.verdict in ("converged", "contracting") and verdicts["final_bracket"] == "ok"
    verdicts["status"] = "ok" if ok else "failed"
    _manifest("solve-global", args, problem, opts, verdicts, t0).write(out)
    print(f"exhaustion: {sol.verdict}; sup-diffs on B_{sol.R0:g}: " + ", ".join(f"{d:.3e}" for d in sol.supdiffs))
    print(f"min barrier margin (w - u) over all nodes: {sol.barrier_margin:.6e}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_transform(args):
    t0 = time.perf_counter()
    if args.kind == "power" and args.delta is None:
        raise UsageError("--kind power needs --delta")
    try:
        spec = TransformSpec(args.kind, args.delta)
    except TransformError as exc:
        raise UsageError(str(exc)) from None
    try:
        fld = read_field(args.input)
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from None
    problem = _load(args.problem) if args.problem else None
    out = Path(args.out)
    print(f"induced gradient coefficient c* = {spec.c_star:.17g}")
    verdicts = {"c_star": fmt(spec.c_star)}
    try:
        if args.direction == "forward":
            result = forward_map(spec, fld)
            write_field(out / "transformed.field", result)
            rt_input = fld.values
        else:
            vals = np.asarray(fld.values)
            pos = vals > 0
            if not np.any(pos):
                raise TransformError("w has no positive nodes")
            u = np.full(vals.shape, np.inf)
            u[pos] = inverse_map(spec, vals[pos])
            coords = fld.grid.coords if isinstance(fld.grid, RectGrid) else np.asarray(fld.grid.nodes)[:, None]
            rows = [",".join(f"x{k + 1}" for k in range(coords.shape[1])) + ",u"]
            rows += [",".join(fmt(c) for c in cs) + f",{fmt(v) if np.isfinite(v) else 'inf'}" for cs, v in zip(coords, u)]
            atomic_write_text(out / "transformed.csv", "\n".join(rows) + "\n")
            rt_input = vals[pos]
            if problem is not None:
                res = verify_transform_residual(spec, problem.a, fld, N=problem.dim, fraction=args.window)
                atomic_write_text(out / "residual.csv", res.csv_rows(fld.grid))
                verdicts["max_residual"] = fmt(res.max_residual)
                print(f"max residual of Delta u - a h(u) on the window: {res.max_residual:.6e} ({res.n_window} nodes)")
        if args.round_trip:
            if args.direction == "forward":
                err = round_trip_error(spec, rt_input)
            else:
                back = forward_map(spec, inverse_map(spec, rt_input))
                err = float(np.max(np.abs(back - rt_input) / np.abs(rt_input)))
            verdicts["round_trip"] = fmt(err)
            print(f"max round-trip relative error: {err:.3e}")
    except TransformError as exc:
        print(f"transform: {exc}", file=sys.stderr)
        _manifest("transform", args, problem, {"kind": args.kind, "delta": args.delta}, {"status": "failed"}, t0).write(out)
        return EXIT_FAIL
    _manifest("transform", args, problem, {"kind": args.kind, "delta": args.delta, "direction": args.direction}, verdicts, t0).write(out)
    return EXIT_OK


def cmd_report(args):
    run = Path(args.run_dir)
    manifest = run / "manifest.txt"
    if not manifest.is_file():
        raise UsageError(f"{run} holds no manifest.txt")
    print(manifest.read_text(), end="")
    for name in ("trace.csv", "continuation.csv"):
        path = run / name
        if path.is_file():
            lines = path.read_text().splitlines()
            print(f"{name}: {len(lines) - 1} rows")
            print("  " + "\n  ".join(lines[-3:]))
    fields = sorted(p.name for p in run.glob("*.field"))
    if fields:
        print("fields: " + ", ".join(fields))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _tunables(p, *, eps=True):
    p.add_argument("--grid-nodes", type=int, help="nodes per axis (solve-bounded) or per unit radius (solve-global)")
    p.add_argument("--radius", type=float, help="ball radius override / first exhaustion radius")
    p.add_argument("--epsilon-start", type=float)
    p.add_argument("--epsilon-floor", type=float)
    p.add_argument("--tol-residual", type=float)
    p.add_argument("--tol-cauchy", type=float)
    p.add_argument("--schedule", help="comma-separated eps values (solve-bounded) or radii (solve-global)")
    p.add_argument("--mode", choices=("eigen", "poisson", "combined"))
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", default="selpde_run", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="selpde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="check positivity, integrability and decay hypotheses")
    p.add_argument("problem")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve-bounded", help="bracket + eps-continuation on a bounded domain")
    p.add_argument("problem")
    _tunables(p)
    p.set_defaults(func=cmd_solve_bounded)

    p = sub.add_parser("solve-global", help="ball exhaustion for a whole-space problem")
    p.add_argument("problem")
    _tunables(p)
    p.add_argument("--tol-exhaust", type=float)
    p.add_argument("--k-max", type=int)
    p.add_argument("--barrier-only", action="store_true", help="tabulate w and K without solving")
    p.set_defaults(func=cmd_solve_global)

    p = sub.add_parser("barrier", help="tabulate the radial barrier w and its bound K")
    p.add_argument("problem")
    p.add_argument("--radii", help="comma-separated radii")
    p.add_argument("--out", default="selpde_run")
    p.set_defaults(func=cmd_barrier)

    p = sub.add_parser("transform", help="blow-up change of variables on a field file")
    p.add_argument("--kind", choices=("exponential", "power"), required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--input", required=True, help="field file (w for --direction inverse)")
    p.add_argument("--problem", help="problem file supplying a and dim for the residual")
    p.add_argument("--direction", choices=("inverse", "forward"), default="inverse")
    p.add_argument("--window", type=float, default=0.05, help="excluded boundary layer fraction")
    p.add_argument("--round-trip", action="store_true")
    p.add_argument("--out", default="selpde_run")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ProblemFileError, ExpressionError, FieldEvaluationError, FieldFileError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
