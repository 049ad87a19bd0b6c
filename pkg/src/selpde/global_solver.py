"""Whole-space pipeline: radial barrier, eps-continuation, ball exhaustion, decay fit.

The barrier solves -w'' - (N-1)/r w' = phi(r), w'(0) = 0, w(inf) = 0:

    w(r) = int_r^inf xi^(1-N) int_0^xi s^(N-1) phi(s) ds dxi                (nested)
         = (N-2)^-1 [int_r^inf xi phi + r^(2-N) int_0^r xi^(N-1) phi]       (closed)

and is bounded by K = w(0) = (N-2)^-1 int_0^inf xi phi.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .assembly import discretize
from .barriers import BracketPair, build_bracket
from .discretization import DiscreteField, RadialGrid
from .problem import DomainSpec, Problem, envelope_callable
from .quadrature import QuadratureError, integrate_finite, integrate_tail
from .truncated import TruncatedSolveOptions, solve_truncated

__all__ = [
    "BarrierError",
    "RadialBarrier",
    "barrier_w",
    "barrier_w_nested",
    "barrier_bound_K",
    "default_schedule",
    "ContinuationTrace",
    "epsilon_continuation",
    "BallRecord",
    "GlobalSolution",
    "exhaust",
    "DecayFit",
    "decay_fit",
    "fit_loglog",
    "fit_offset_power",
]


class BarrierError(ValueError):
    """Barrier inputs are inadmissible (N <= 2, divergent integral) or violated."""


def _check_dim(N):
    if not N > 2:
        raise BarrierError(f"the barrier needs N > 2, got {N}")


def _phi_of(phi):
    if isinstance(phi, Problem):
        return envelope_callable(phi)
    return phi


def _segments(lo, hi, points):
    """Break [lo, hi] at the given interior points."""
    cuts = [lo] + sorted(p for p in (points or ()) if lo < p < hi) + [hi]
    return list(zip(cuts[:-1], cuts[1:]))


def _integrate(f, lo, hi, points, rtol):
    total = 0.0
    err = 0.0
    for a, b in _segments(lo, hi, points):
        v, e = integrate_finite(f, a, b, rtol=rtol)
        total += v
        err += e
    return total, err


def barrier_bound_K(phi, N, *, points=None, rtol=1e-12):
    """K = (N-2)^-1 int_0^inf xi phi(xi) dxi."""
    _check_dim(N)
    phi = _phi_of(phi)
    try:
        val, _ = integrate_tail(lambda x: x * phi(x), 0.0, rtol=rtol, points=points)
    except QuadratureError as exc:
        raise BarrierError(f"int_0^inf r phi(r) dr did not converge: {exc}") from exc
    return val / (N - 2)


def _closed_sorted(phi, N, radii, points, rtol):
    """Closed form at ascending radii; pieces accumulate across consecutive radii."""
    outer_f = lambda x: x * phi(x)
    inner_f = lambda x: x ** (N - 1) * phi(x)
    n = radii.size
    outer = np.empty(n)
    inner = np.empty(n)
    outer[-1], _ = integrate_tail(outer_f, radii[-1], rtol=rtol, points=points)
    for i in range(n - 2, -1, -1):
        outer[i] = outer[i + 1] + _integrate(outer_f, radii[i], radii[i + 1], points, rtol)[0]
    acc = 0.0
    prev = 0.0
    for i in range(n):
        acc += _integrate(inner_f, prev, radii[i], points, rtol)[0]
        inner[i] = acc
        prev = radii[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        second = np.where(radii > 0, radii ** (2.0 - N) * inner, 0.0)
    return (outer + second) / (N - 2)


def _as_sorted(r):
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("radii must be finite and nonnegative")
    uniq, inv = np.unique(arr, return_inverse=True)
    return arr, uniq, inv


def barrier_w(phi, N, r, *, points=None, rtol=1e-12):
    """Closed-form barrier at radius/radii ``r`` (scalar in, scalar out)."""
    _check_dim(N)
    phi = _phi_of(phi)
    arr, uniq, inv = _as_sorted(r)
    try:
        vals = _closed_sorted(phi, N, uniq, points, rtol)[inv].reshape(arr.shape)
    except QuadratureError as exc:
        raise BarrierError(f"barrier quadrature failed: {exc}") from exc
    return float(vals[0]) if np.ndim(r) == 0 else vals.reshape(np.shape(r))


class _InnerIntegral:
    """F(xi) = int_0^xi s^(N-1) phi(s) ds over cached dyadic panels."""

    def __init__(self, phi, N, points, rtol):
        self.f = lambda s: s ** (N - 1) * phi(s)
        self.rtol = rtol
        self.points = sorted(points or ())
        self.edges = [0.0, 1.0]
        self.cum = [0.0, self._piece(0.0, 1.0)]

    def _piece(self, a, b):
        return _integrate(self.f, a, b, self.points, self.rtol)[0]

    def __call__(self, xi):
        while self.edges[-1] < xi:
            a = self.edges[-1]
            self.edges.append(2.0 * a)
            self.cum.append(self.cum[-1] + self._piece(a, 2.0 * a))
        k = int(np.searchsorted(self.edges, xi, side="right")) - 1
        k = min(max(k, 0), len(self.edges) - 1)
        return self.cum[k] + self._piece(self.edges[k], xi)


def barrier_w_nested(phi, N, r, *, points=None, rtol=1e-12):
    """Barrier from the double integral, as an independent check of :func:`barrier_w`."""
    _check_dim(N)
    phi = _phi_of(phi)
    F = _InnerIntegral(phi, N, points, rtol)
    g = lambda x: x ** (1 - N) * F(x)
    arr, uniq, inv = _as_sorted(r)
    vals = np.empty(uniq.size)
    try:
        acc, _ = integrate_tail(g, uniq[-1], rtol=rtol, points=points)
        vals[-1] = acc
        for i in range(uniq.size - 2, -1, -1):
            acc += _integrate(g, uniq[i], uniq[i + 1], points, rtol)[0]
            vals[i] = acc
    except QuadratureError as exc:
        raise BarrierError(f"nested barrier quadrature failed: {exc}") from exc
    out = vals[inv].reshape(arr.shape)
    return float(out[0]) if np.ndim(r) == 0 else out.reshape(np.shape(r))


@dataclass
class RadialBarrier:
    """Envelope phi, dimension N and the bound K, with both w evaluators."""

    phi: object
    N: int
    points: tuple = ()
    rtol: float = 1e-12
    K: float = field(init=False)

    def __post_init__(self):
        self.phi = _phi_of(self.phi)
        self.K = barrier_bound_K(self.phi, self.N, points=self.points, rtol=self.rtol)

    @classmethod
    def from_problem(cls, problem: Problem, **kw):
        return cls(envelope_callable(problem), problem.dim, **kw)

    def w(self, r):
        return barrier_w(self.phi, self.N, r, points=self.points, rtol=self.rtol)

    def w_nested(self, r):
        return barrier_w_nested(self.phi, self.N, r, points=self.points, rtol=self.rtol)

    __call__ = w

    def check_bound(self, r, rel=1e-9):
        """True when every sampled w(r) lies in [0, K (1 + rel)]."""
        vals = np.atleast_1d(self.w(r))
        return bool(np.all(vals >= 0) and np.all(vals <= self.K * (1 + rel)))

    def table(self, radii):
        radii = np.asarray(radii, dtype=float)
        return np.column_stack([radii, self.w(radii)])


# ------------------------------------------------------------- continuation


def default_schedule(n_max=20, floor=None, start=None):
    """eps_n = 2^-n for n = 1..n_max, truncated below ``floor``."""
    eps = [2.0**-n for n in range(1, n_max + 1)]
    if start is not None:
        eps = [e for e in eps if e <= start]
    if floor is not None:
        eps = [e for e in eps if e >= floor]
    return eps


@dataclass
class ContinuationTrace:
    epsilons: list = field(default_factory=list)
    supdiffs: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    solutions: list = field(default_factory=list, repr=False)
    verdict: str = "running"
    bracket: BracketPair | None = None
    limit_bracket_ok: bool | None = None
    bracket_slack: float = 0.0

    @property
    def converged(self):
        return self.verdict == "converged"

    def csv_rows(self):
        rows = ["step,epsilon,supdiff,newton_iterations,final_residual,converged"]
        for k, (e, rep) in enumerate(zip(self.epsilons, self.reports)):
            d = self.supdiffs[k - 1] if k > 0 else float("nan")
            rows.append(f"{k},{e:.17g},{d:.17g},{rep.iterations},{rep.final_residual:.17g},{int(rep.converged)}")
        return "\n".join(rows) + "\n"


def _bracket_violation(u, bracket):
    """Largest amount by which u leaves [sub - eps, super - eps] (zero-boundary form)."""
    lo = bracket.lower
    hi = bracket.upper
    return float(max(np.max(lo - u), np.max(u - hi), 0.0)) if u.size else 0.0


def epsilon_continuation(
    problem,
    grid=None,
    schedule=None,
    opts: TruncatedSolveOptions | None = None,
    *,
    tol_cauchy=1e-6,
    mode="eigen",
    bracket: BracketPair | None = None,
    start=None,
    stall_steps=3,
):
    """Warm-started chain of truncated solves along a decreasing eps schedule.

    Stops once two consecutive sup-norm differences fall below
    ``tol_cauchy``. Returns ``(u, trace)`` with u in the zero-boundary form;
    the trace verdict is ``converged``, ``floor-reached`` (schedule ran out first), ``stalled``
    or ``solve-failed``.
    """
    schedule = list(default_schedule() if schedule is None else schedule)
    if not schedule or any(e <= 0 for e in schedule):
        raise ValueError("schedule must be a nonempty list of positive eps")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    disc = problem if hasattr(problem, "op") else discretize(problem, grid)
    opts = opts or TruncatedSolveOptions()
    base = bracket if bracket is not None else build_bracket(disc, epsilon=schedule[0], mode=mode)
    trace = ContinuationTrace(bracket=base)
    u = None if start is None else np.asarray(getattr(start, "values", start), dtype=float)
    below = 0
    rising = 0
    contracting = False
    worst = 0.0
    for eps in schedule:
        b = base.shifted(eps)
        field_, rep = solve_truncated(disc, epsilon=eps, bracket=b, opts=opts, start=u)
        trace.epsilons.append(eps)
        trace.reports.append(rep)
        trace.solutions.append(field_)
        new = np.asarray(field_.values)
        worst = max(worst, _bracket_violation(new, b))
        if not rep.converged:
            u = new
            trace.verdict = "solve-failed"
            break
        if u is not None and len(trace.epsilons) > 1:
            d = float(np.max(np.abs(new - u)))
            # the early rise while eps is still above the solution scale is not a stall
            if trace.supdiffs and d < trace.supdiffs[-1]:
                contracting = True
                rising = 0
            elif contracting:
                rising += 1
            trace.supdiffs.append(d)
            below = below + 1 if d < tol_cauchy else 0
        u = new
        if below >= 2:
            trace.verdict = "converged"
            break
        if rising >= stall_steps:
            trace.verdict = "stalled"
            break
    else:
        trace.verdict = "floor-reached"
    trace.bracket_slack = worst
    # limit bracket sigma1 phi1^2 <= u <= v is the eps-free part of the bracket
    trace.limit_bracket_ok = bool(
        np.all(u >= base.lower - 1e-12) and np.all(u <= base.upper + 1e-12)
    )
    return disc.field(u), trace


# ---------------------------------------------------------------- exhaustion


@dataclass
class BallRecord:
    k: int
    R: float
    u: DiscreteField
    trace: ContinuationTrace
    supdiff: float
    barrier_margin: float
    barrier_violations: int
    bracket_ok: bool


@dataclass
class GlobalSolution:
    problem: Problem
    radii: list
    balls: list
    barrier: RadialBarrier
    R0: float
    nodes_per_unit: int
    tol_exhaust: float
    verdict: str = "running"
    elapsed: float = 0.0

    @property
    def final(self) -> DiscreteField:
        return self.balls[-1].u

    @property
    def supdiffs(self):
        return [b.supdiff for b in self.balls[1:]]

    @property
    def barrier_margin(self):
        return min(b.barrier_margin for b in self.balls)

    def __call__(self, r):
        """Zero-extended final field, linearly interpolated in r."""
        u = self.final
        r = np.asarray(r, dtype=float)
        return np.interp(r, u.grid.nodes, u.values, right=0.0)

    def trace_rows(self):
        rows = ["k,R_k,supdiff,barrier_margin"]
        for b in self.balls:
            rows.append(f"{b.k},{b.R:.17g},{b.supdiff:.17g},{b.barrier_margin:.17g}")
        return "\n".join(rows) + "\n"

    def decay_rows(self):
        u = self.final
        r = np.asarray(u.grid.nodes)
        w = self.barrier.w(r)
        rows = ["r,u,w"]
        rows.extend(f"{ri:.17g},{ui:.17g},{wi:.17g}" for ri, ui, wi in zip(r, u.values, w))
        return "\n".join(rows) + "\n"


def _restrict(u: DiscreteField, R0):
    r = np.asarray(u.grid.nodes)
    return u.values[r <= R0 * (1 + 1e-12)]


def _warm_start(prev: DiscreteField, grid):
    return np.interp(np.asarray(grid.nodes), prev.grid.nodes, prev.values, right=0.0)


def exhaust(
    problem: Problem,
    radii=None,
    opts: TruncatedSolveOptions | None = None,
    *,
    R0=2.0,
    k_max=4,
    nodes_per_unit=64,
    tol_exhaust=1e-5,
    tol_cauchy=1e-6,
    schedule=None,
    mode="eigen",
    warm_start=True,
    barrier: RadialBarrier | None = None,
    slack_factor=1.0,
):
    """Solve on balls B_{R_k}, R_k = R0 2^k, and monitor convergence on B_{R0}.

    Each ball gets its own bracket and eps-continuation; u_k <= w is checked
    nodally with slack ``slack_factor * h^2 * max phi``. A violation raises
    :class:`BarrierError`. The verdict is ``converged`` (sup-diff below
    ``tol_exhaust``), ``contracting`` (sup-diffs shrink geometrically but the
    schedule ended first) or ``non-cauchy``.
    """
    if problem.domain.kind != "wholespace":
        raise ValueError("exhaustion needs a whole-space problem")
    if not problem.radial:
        raise ValueError("whole-space runs are radial: a and c must depend on r only")
    _check_dim(problem.dim)
    radii = list(radii) if radii is not None else [R0 * 2.0**k for k in range(k_max + 1)]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    R0 = radii[0]
    barrier = barrier or RadialBarrier.from_problem(problem)
    opts = opts or TruncatedSolveOptions()
    t0 = time.perf_counter()
    sol = GlobalSolution(problem, radii, [], barrier, R0, nodes_per_unit, tol_exhaust)
    prev = None
    for k, R in enumerate(radii):
        n = int(round(nodes_per_unit * R)) + 1
        grid = RadialGrid(R, n)
        ball = problem.with_domain(DomainSpec("ball", radius=R))
        disc = discretize(ball, grid)
        start = _warm_start(prev, grid) if (warm_start and prev is not None) else None
        u, trace = epsilon_continuation(
            disc, schedule=schedule, opts=opts, tol_cauchy=tol_cauchy, mode=mode, start=start
        )
        r = np.asarray(grid.nodes)
        w = barrier.w(r)
        slack = slack_factor * grid.h**2 * max(barrier.phi(float(x)) for x in r)
        margin = w - u.values
        violations = int(np.count_nonzero(margin < -slack))
        supdiff = float("nan") if prev is None else float(np.max(np.abs(_restrict(u, R0) - _restrict(prev, R0))))
        rec = BallRecord(k, R, u, trace, supdiff, float(np.min(margin)), violations, bool(trace.limit_bracket_ok))
        sol.balls.append(rec)
        if violations:
            sol.verdict = "barrier-violation"
            sol.elapsed = time.perf_counter() - t0
            i = int(np.argmin(margin))
            raise BarrierError(
                f"u_k > w at {violations} node(s) on ball R={R}; worst r={float(r[i])!r}, u - w = {-margin[i]:.3e}"
            )
        if not trace.converged and trace.verdict != "floor-reached":
            sol.verdict = f"ball {k}: {trace.verdict}"
            break
        prev = u
        if k > 0 and supdiff < tol_exhaust:
            sol.verdict = "converged"
            break
    else:
        sol.verdict = _cauchy_verdict(sol.supdiffs)
    sol.elapsed = time.perf_counter() - t0
    return sol


def _cauchy_verdict(diffs):
    if len(diffs) < 2:
        return "non-cauchy"
    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0]
    if ratios and all(q < 0.75 for q in ratios):
        return "contracting"
    return "non-cauchy"


# --------------------------------------------------------------- decay fits


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    residual: float
    predicted: float | None
    window: tuple
    n_points: int
    method: str
    plain_slope: float
    barrier_slope: float | None = None
    barrier_window: tuple | None = None

    def to_text(self):
        pred = "n/a" if self.predicted is None else f"{self.predicted:.6g}"
        lines = [
            f"window=[{self.window[0]:.6g}, {self.window[1]:.6g}] ({self.n_points} nodes)",
            f"method={self.method}",
            f"slope={self.slope:.6g}",
            f"plain log-log slope={self.plain_slope:.6g}",
            f"predicted 2-mu={pred}",
            f"fit residual={self.residual:.3g}",
        ]
        if self.barrier_slope is not None:
            lo, hi = self.barrier_window
            lines.append(f"barrier slope={self.barrier_slope:.6g} on [{lo:.6g}, {hi:.6g}]")
        return "\n".join(lines)


def fit_loglog(r, y, *, floor=1e-14, min_points=5):
    """Least-squares slope, intercept and rms residual of ln y against ln r."""
    r, y = _fit_input(r, y, floor, min_points)
    x, z = np.log(r), np.log(y)
    slope, intercept = np.polyfit(x, z, 1)
    resid = float(np.sqrt(np.mean((z - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), resid


def _fit_input(r, y, floor, min_points):
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if r.size < min_points:
        raise ValueError(f"fitting window holds {r.size} points, need at least {min_points}")
    if np.any(y < floor):
        raise ValueError(f"values below the {floor:g} floor in the fitting window: fit refused")
    return r, y


def fit_offset_power(r, y, R, *, floor=1e-14, min_points=5, bounds=(-12.0, -1e-3)):
    """Fit y = A (r^s - R^s): a power law pinned to zero at the Dirichlet radius R.

    Zero data on the ball boundary subtracts a nearly constant harmonic
    offset from the whole-space profile; this model carries it explicitly.
    Returns ``(s, ln A, rms residual of ln y)``.
    """
    r, y = _fit_input(r, y, floor, min_points)
    if not np.all(r < R):
        raise ValueError("offset fit needs every radius strictly inside the ball")
    z = np.log(y)

    def parts(s):
        g = np.log(r**s - R**s)
        c = float(np.mean(z - g))
        return c, z - g - c

    res = minimize_scalar(lambda s: float(np.sum(parts(s)[1] ** 2)), bounds=bounds, method="bounded",
                          options={"xatol": 1e-10})
    c, e = parts(res.x)
    return float(res.x), c, float(np.sqrt(np.mean(e**2)))


def decay_fit(
    solution: GlobalSolution,
    mu=None,
    *,
    window=None,
    exclude=0.1,
    span=math.sqrt(10.0),
    method="offset",
    barrier_window=(1.0e3, 1.0e4),
    floor=1e-14,
):
    """Decay exponent of the outermost u_k over a fitting window, plus that of w.

    The default window is [hi / span, hi] with hi = (1 - exclude) R_K. With
    ``method="offset"`` the slope comes from :func:`fit_offset_power`, which
    accounts for the zero boundary value at R_K; ``"plain"`` is the raw
    log-log slope (also always reported). The barrier slope is fitted on
    ``barrier_window``, where w is in its asymptotic regime. ``mu`` only
    sets the reported prediction 2 - mu.
    """
    if method not in ("offset", "plain"):
        raise ValueError(f"unknown fit method {method!r}")
    u = solution.final
    r = np.asarray(u.grid.nodes)
    R = float(r[-1])
    if window is None:
        hi = (1.0 - exclude) * R
        window = (hi / span, hi)
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError(f"bad fitting window {window!r}")
    sel = (r >= lo) & (r <= hi) & (r < R)
    plain, intercept, resid = fit_loglog(r[sel], u.values[sel], floor=floor)
    slope = plain
    if method == "offset":
        slope, intercept, resid = fit_offset_power(r[sel], u.values[sel], R, floor=floor)
    w_slope = None
    if barrier_window is not None:
        rb = np.geomspace(*barrier_window, 61)
        w_slope = fit_loglog(rb, solution.barrier.w(rb), floor=0.0)[0]
    predicted = None if mu is None else 2.0 - mu
    return DecayFit(
        slope, intercept, resid, predicted, (float(lo), float(hi)), int(sel.sum()), method, plain,
        w_slope, None if barrier_window is None else tuple(map(float, barrier_window)),
    )
