"""Solver for the eps-truncated problem

    -Laplace(u) + c(x) |grad u|^2 / (u + eps) = a(x),   u = 0 on the boundary,

inside a sub/super bracket. Equivalently U = u + eps solves the problem with
the untruncated gradient term and boundary value eps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import DiscreteProblem, discretize
from .barriers import BracketPair
from .discretization import DiscreteField, solve_linear, solve_dirichlet

__all__ = [
    "SingularityError",
    "TruncatedSolveOptions",
    "SolveReport",
    "UniquenessReport",
    "residual",
    "jacobian",
    "solve_truncated",
    "verify_uniqueness",
]

_EPS = np.finfo(float).eps


class SingularityError(ValueError):
    def __init__(self, node, value):
        self.node = node
        self.value = value
        super().__init__(f"u + eps = {value!r} is not positive at node {node}")


@dataclass(frozen=True)
class TruncatedSolveOptions:
    tol_residual: float = 1e-10
    max_newton: int = 50
    damping: float = 0.5
    max_halvings: int = 30
    picard: bool = True
    max_picard: int = 2000
    bracket_projection: bool = True

    def __post_init__(self):
        if not (self.tol_residual > 0 and 0 < self.damping < 1):
            raise ValueError("tolerances must be positive and damping in (0, 1)")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    repairs_history: list = field(default_factory=list)
    bracket_violations_repaired: int = 0
    converged: bool = False
    final_residual: float = float("nan")
    tolerance: float = float("nan")
    strategy: str = "newton"
    message: str = ""

    def csv_rows(self):
        rows = ["step,residual_inf,repairs"]
        for k, (r, m) in enumerate(itertools.zip_longest(self.residual_history, self.repairs_history, fillvalue=0)):
            rows.append(f"{k},{r:.17g},{m}")
        return "\n".join(rows) + "\n"


def _disc(problem, grid):
    if isinstance(problem, DiscreteProblem):
        return problem
    return discretize(problem, grid)


def _residual_values(disc, u, shift, bvalue):
    """A u + c |grad u|^2 / (u + shift) - a inside, u - bvalue on the boundary."""
    inside = disc.interior
    denom = u + shift
    bad = inside & ~(denom > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[np.argmin(denom[bad])])
        raise SingularityError(i, float(denom[i]))
    out = disc.op.apply(u)
    gsq = disc.grad_sq(u)
    safe = np.where(inside, denom, 1.0)
    out = np.where(inside, out + disc.c * gsq / safe - disc.a, u - bvalue)
    return out


def residual(problem, u: DiscreteField, epsilon: float, grid=None) -> DiscreteField:
    """Nodal residual of the truncated problem (boundary rows report u - 0)."""
    disc = _disc(problem, grid if grid is not None else u.grid)
    return disc.field(_residual_values(disc, np.asarray(u.values), epsilon, 0.0))


def _jacobian(disc, u, shift):
    inside = disc.interior.astype(float)
    denom = np.where(disc.interior, u + shift, 1.0)
    grads = [D @ u for D in disc.grads]
    gsq = sum(g * g for g in grads)
    J = disc.op.matrix + sp.diags(-inside * disc.c * gsq / denom**2)
    for D, g in zip(disc.grads, grads):
        J = J + sp.diags(inside * 2.0 * disc.c * g / denom) @ D
    return J.tocsr()


def jacobian(problem, u: DiscreteField, epsilon: float, grid=None):
    """Analytic Jacobian of :func:`residual` (sparse, nonsymmetric)."""
    disc = _disc(problem, grid if grid is not None else u.grid)
    return _jacobian(disc, np.asarray(u.values), epsilon)


def _round_off_floor(disc, u):
    norm_a = float(abs(disc.op.matrix).sum(axis=1).max())
    return 4 * _EPS * norm_a * max(float(np.max(np.abs(u))), 1.0)


def _solve_core(disc, shift, bvalue, lo, hi, start, opts: TruncatedSolveOptions):
    """Damped Newton with nodal projection onto [lo, hi]; Picard fallback."""
    report = SolveReport()
    kind = "tridiagonal" if disc.op.kind == "tridiagonal" else "general"

    def project(x):
        if not opts.bracket_projection:
            return x, 0
        y = np.clip(x, lo, hi)
        return y, int(np.count_nonzero(y != x))

    u, _ = project(np.array(start, dtype=float))
    u[disc.boundary] = bvalue if np.ndim(bvalue) == 0 else np.asarray(bvalue)[disc.boundary]
    F = _residual_values(disc, u, shift, bvalue)
    scale = disc.a_scale

    def tol_now(x):
        return max(opts.tol_residual * scale, _round_off_floor(disc, x))

    rnorm = float(np.max(np.abs(F)))
    report.residual_history.append(rnorm)
    report.repairs_history.append(0)
    stalled = False
    for it in range(1, opts.max_newton + 1):
        if rnorm <= tol_now(u):
            break
        J = _jacobian(disc, u, shift)
        try:
            delta = solve_dirichlet(J, -F, disc.boundary, kind)
        except (ValueError, np.linalg.LinAlgError, RuntimeError):
            stalled = True
            break
        if not np.all(np.isfinite(delta)):
            stalled = True
            break
        f2 = float(np.linalg.norm(F))
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            cand, repairs = project(u + t * delta)
            try:
                Fc = _residual_values(disc, cand, shift, bvalue)
            except SingularityError:
                t *= opts.damping
                continue
            if np.linalg.norm(Fc) <= f2:
                accepted = True
                break
            t *= opts.damping
        if not accepted:
            stalled = True
            break
        u, F = cand, Fc
        rnorm = float(np.max(np.abs(F)))
        report.iterations = it
        report.residual_history.append(rnorm)
        report.repairs_history.append(repairs)
        report.bracket_violations_repaired += repairs
    else:
        stalled = rnorm > tol_now(u)

    if stalled and rnorm > tol_now(u) and opts.picard:
        report.strategy = "picard"
        inside = disc.interior
        for it in range(1, opts.max_picard + 1):
            gsq = disc.grad_sq(u)
            denom = np.where(inside, u + shift, 1.0)
            rhs = disc.a - disc.c * gsq / denom
            nxt = solve_linear(disc.op, rhs, bvalue).values
            u, repairs = project(nxt)
            F = _residual_values(disc, u, shift, bvalue)
            rnorm = float(np.max(np.abs(F)))
            report.iterations += 1
            report.residual_history.append(rnorm)
            report.repairs_history.append(repairs)
            report.bracket_violations_repaired += repairs
            if rnorm <= tol_now(u):
                break
            hist = report.residual_history
            # no 10% gain over the last 50 sweeps: give up
            if it >= 100 and min(hist[-50:]) > 0.9 * min(hist[:-50]):
                break

    report.final_residual = rnorm
    report.tolerance = tol_now(u)
    report.converged = rnorm <= report.tolerance
    if not report.converged:
        report.message = f"{report.strategy} stopped with residual {rnorm:.3e} > {report.tolerance:.3e}"
    return u, report


def _bounds(disc, bracket, epsilon, form):
    if bracket is None:
        raise ValueError("a bracket is required")
    if not np.all(bracket.sub.values <= bracket.super.values):
        raise ValueError("invalid bracket: sub > super at some node")
    lo = np.array(bracket.lower, dtype=float)
    hi = np.array(bracket.upper, dtype=float)
    if epsilon == 0 and not np.all(lo[disc.interior] > 0):
        raise ValueError("eps = 0 needs a lower bracket that is positive at interior nodes")
    if form == "grgr":
        lo, hi = lo + epsilon, hi + epsilon
    return lo, hi


def solve_truncated(
    problem,
    grid=None,
    epsilon: float = 0.1,
    bracket: BracketPair | None = None,
    opts: TruncatedSolveOptions | None = None,
    *,
    start=None,
    form: str = "unicl",
):
    """Solve the truncated problem inside ``bracket``.

    Returns ``(u, report)``. With ``form="unicl"`` (default) ``u`` vanishes
    on the boundary and lies in [sub - eps_b, super - eps_b], eps_b being
    the bracket's own eps. With ``form="grgr"`` the unknown is U = u + eps
    with boundary value eps and bounds [sub, super] shifted to this eps.
    The default start is the bracket midpoint.
    """
    opts = opts or TruncatedSolveOptions()
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if form not in ("unicl", "grgr"):
        raise ValueError(f"unknown form {form!r}")
    disc = _disc(problem, grid if grid is not None else bracket.sub.grid)
    lo, hi = _bounds(disc, bracket, epsilon, form)
    if start is None:
        x0 = 0.5 * (lo + hi)
    else:
        x0 = np.array(start.values if isinstance(start, DiscreteField) else start, dtype=float)
    if form == "unicl":
        u, report = _solve_core(disc, epsilon, 0.0, lo, hi, x0, opts)
    else:
        u, report = _solve_core(disc, 0.0, epsilon, lo, hi, x0, opts)
    return disc.field(u), report


@dataclass
class UniquenessReport:
    verdict: str
    distances: dict
    alpha_max: dict
    reports: list
    tolerance: float

    @property
    def max_distance(self):
        return max(self.distances.values(), default=0.0)


def verify_uniqueness(
    problem, grid=None, epsilon=0.1, bracket=None, starts=None, opts=None, *, distance_tol=1e-8
) -> UniquenessReport:
    """Solve from several starts and compare the limits pairwise.

    Also reports max over nodes of (u_i + eps)/(u_j + eps) - 1 for every
    ordered pair, which must vanish for a unique solution. A non-convergent
    run makes the verdict ``"inconclusive"``, never ``"distinct"``.
    """
    opts = opts or TruncatedSolveOptions()
    disc = _disc(problem, grid if grid is not None else bracket.sub.grid)
    if not starts:
        lo, hi = _bounds(disc, bracket, epsilon, "unicl")
        starts = [lo, hi, 0.5 * (lo + hi)]
    sols, reports = [], []
    for s in starts:
        u, rep = solve_truncated(disc, epsilon=epsilon, bracket=bracket, opts=opts, start=s)
        sols.append(np.asarray(u.values))
        reports.append(rep)
    distances, alpha = {}, {}
    for i, j in itertools.combinations(range(len(sols)), 2):
        distances[(i, j)] = float(np.max(np.abs(sols[i] - sols[j])))
    for i, j in itertools.permutations(range(len(sols)), 2):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (sols[i] + epsilon) / (sols[j] + epsilon) - 1.0
        ratio = ratio[disc.interior & np.isfinite(ratio)]
        alpha[(i, j)] = float(np.max(ratio)) if ratio.size else 0.0
    if not all(r.converged for r in reports):
        verdict = "inconclusive"
    elif all(d <= distance_tol for d in distances.values()):
        verdict = "unique"
    else:
        verdict = "distinct"
    return UniquenessReport(verdict, distances, alpha, reports, distance_tol)
