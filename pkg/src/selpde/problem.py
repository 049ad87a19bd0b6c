"""Problem definitions, coefficient fields and the hypothesis checker."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator, interp1d

from .expr import ExpressionError, compile_expression, parse_expression, symbols_of, to_source
from .quadrature import QuadratureError, integrate_halfline

__all__ = [
    "FieldEvaluationError",
    "ProblemFileError",
    "CoefficientField",
    "RadialTable",
    "DomainSpec",
    "Problem",
    "Sampling",
    "AssumptionReport",
    "eval_field",
    "phi_envelope",
    "sphere_points",
    "check_assumptions",
    "parse_problem_text",
    "load_problem",
]


class FieldEvaluationError(ValueError):
    """A coefficient field produced a non-finite value."""

    def __init__(self, name, location, value):
        self.location = location
        self.value = value
        super().__init__(f"field {name!r} is not finite ({value!r}) at {location}")


class ProblemFileError(ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)


class RadialTable:
    """Tabulated radial profile ``(r_i, f_i)``.

    ``rule`` is ``"pchip"`` (monotone cubic, the default) or ``"linear"``.
    Beyond the last knot the profile is continued as the power law through
    the last two knots, which keeps whole-space tails evaluable.
    """

    def __init__(self, knots: Sequence[float], values: Sequence[float], rule: str = "pchip"):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("need matching 1-D knot and value arrays with at least 2 entries")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("table knots must be strictly increasing")
        if knots[0] < 0:
            raise ValueError("radial knots must be nonnegative")
        if not np.all(np.isfinite(values)):
            raise ValueError("table values must be finite")
        if rule == "pchip":
            self._interp = PchipInterpolator(knots, values, extrapolate=False)
        elif rule == "linear":
            self._interp = interp1d(knots, values, bounds_error=False, fill_value=np.nan)
        else:
            raise ValueError(f"unknown interpolation rule {rule!r}")
        self.knots = knots
        self.values = values
        self.rule = rule
        r1, r2 = knots[-2], knots[-1]
        f1, f2 = values[-2], values[-1]
        if f1 > 0 and f2 > 0 and r1 > 0:
            self._tail_slope = math.log(f2 / f1) / math.log(r2 / r1)
        else:
            self._tail_slope = None

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self._interp(r), dtype=float)
        beyond = r > self.knots[-1]
        if np.any(beyond):
            if self._tail_slope is None:
                tail = np.full(np.count_nonzero(beyond), np.nan)
            else:
                tail = self.values[-1] * (r[beyond] / self.knots[-1]) ** self._tail_slope
            out = np.array(out, copy=True)
            out[beyond] = tail
        return out

    @classmethod
    def from_file(cls, path, rule="pchip"):
        data = np.loadtxt(path, comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (r value)")
        return cls(data[:, 0], data[:, 1], rule=rule)


class CoefficientField:
    """An immutable coefficient a(x) or c(x).

    Built either from expression source (symbols ``r``, ``x1..xN``, ``pi``,
    ``e``) or from a :class:`RadialTable`. A field is radial when it does
    not reference any Cartesian coordinate.
    """

    def __init__(self, source=None, *, table: RadialTable | None = None, dim=None, name="field"):
        if (source is None) == (table is None):
            raise ValueError("give exactly one of an expression source or a table")
        self.name = name
        self.dim = dim
        self.table = table
        if table is not None:
            self.source = None
            self.ast = None
            self.radial = True
            self._fn = None
        else:
            self.source = str(source)
            self.ast = parse_expression(self.source, dim=dim)
            syms = symbols_of(self.ast)
            self.radial = syms <= {"r"}
            self._fn = compile_expression(self.ast)
            self._needs_coords = bool(syms - {"r"})

    @classmethod
    def constant(cls, value, name="field"):
        return cls(repr(float(value)), name=name)

    def describe(self):
        if self.table is not None:
            return f"table({self.table.rule}, {self.table.knots.size} knots)"
        return to_source(self.ast)

    def _eval_radial(self, r):
        if self.table is not None:
            return self.table(r)
        return self._fn({"r": r})

    def _eval_points(self, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1))
        if self.table is not None:
            return self.table(r)
        env = {"r": r}
        for k in range(x.shape[-1]):
            env[f"x{k + 1}"] = x[..., k]
        return self._fn(env)

    def __call__(self, point, *, radial=None):
        return eval_field(self, point, radial=radial)

    def __repr__(self):
        return f"CoefficientField({self.name}={self.describe()!r})"


def eval_field(field_: CoefficientField, point, *, radial=None):
    """Evaluate ``field_`` at a radius (or array of radii) or at coordinates.

    ``radial=True`` treats ``point`` as radii (only allowed for radial
    fields); ``radial=False`` treats the last axis of ``point`` as Cartesian
    coordinates. By default scalars and 1-D arrays of radial fields are read
    as radii.
    """
    arr = np.asarray(point, dtype=float)
    if radial is None:
        radial = field_.radial and arr.ndim <= 1
    if radial:
        if not field_.radial:
            raise ValueError(f"field {field_.name!r} is not radial; pass coordinates")
        if np.any(arr < 0):
            raise ValueError("radius must be nonnegative")
        with np.errstate(all="ignore"):
            out = np.asarray(field_._eval_radial(arr), dtype=float)
        out = np.broadcast_to(out, arr.shape)
        _check_finite(field_, out, arr, radial=True)
    else:
        if arr.ndim == 0:
            raise ValueError("coordinates must have a trailing dimension axis")
        with np.errstate(all="ignore"):
            out = np.asarray(field_._eval_points(arr), dtype=float)
        out = np.broadcast_to(out, arr.shape[:-1])
        _check_finite(field_, out, arr, radial=False)
    if out.ndim == 0:
        return float(out)
    return np.array(out)


def _check_finite(field_, out, where, radial):
    bad = ~np.isfinite(out)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        if radial:
            loc = f"r={float(where[tuple(idx)]) if where.ndim else float(where)!r}"
            value = out[tuple(idx)] if out.ndim else out
        else:
            pt = where[tuple(idx)] if where.ndim > 1 else where
            loc = "x=(" + ", ".join(repr(float(v)) for v in np.atleast_1d(pt)) + ")"
            value = out[tuple(idx)] if out.ndim else out
        raise FieldEvaluationError(field_.name, loc, float(value))


@dataclass(frozen=True)
class DomainSpec:
    """``kind`` is ``"ball"`` (``radius``), ``"rect"`` (``bounds``) or ``"wholespace"``."""

    kind: str
    radius: float | None = None
    bounds: tuple = ()

    def __post_init__(self):
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise ValueError("ball domain needs a positive radius")
        elif self.kind == "rect":
            if not self.bounds:
                raise ValueError("rect domain needs bounds")
            for lo, hi in self.bounds:
                if not hi > lo:
                    raise ValueError("rect bounds must satisfy min < max")
        elif self.kind != "wholespace":
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @property
    def bounded(self):
        return self.kind != "wholespace"

    def describe(self):
        if self.kind == "ball":
            return f"ball {self.radius!r}"
        if self.kind == "rect":
            return "rect " + " ".join(f"{lo!r}..{hi!r}" for lo, hi in self.bounds)
        return "wholespace"


@dataclass(frozen=True)
class Problem:
    """-Laplace(u) + c(x) |grad u|^2 / u = a(x) on ``domain`` in R^dim.

    ``holder_alpha`` is carried as metadata only; smoothness of a and c
    cannot be checked numerically.
    """

    dim: int
    a: CoefficientField
    c: CoefficientField
    domain: DomainSpec
    holder_alpha: float | None = None
    source_text: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.domain.kind == "wholespace" and self.dim <= 2:
            raise ValueError("whole-space problems need dim > 2")
        if self.domain.kind == "rect" and len(self.domain.bounds) != self.dim:
            raise ValueError("rect bounds must give one interval per dimension")

    @property
    def radial(self):
        return self.a.radial and self.c.radial and self.domain.kind in ("ball", "wholespace")

    def with_domain(self, domain):
        return Problem(self.dim, self.a, self.c, domain, self.holder_alpha, self.source_text)

    def with_fields(self, a=None, c=None):
        return Problem(self.dim, a or self.a, c or self.c, self.domain, self.holder_alpha, self.source_text)

    def content_hash(self):
        text = self.source_text
        if text is None:
            text = f"dim={self.dim}\ndomain={self.domain.describe()}\na={self.a.describe()}\nc={self.c.describe()}\n"
        return hashlib.sha256(text.encode()).hexdigest()


def sphere_points(dim, m, seed=0):
    """``m`` deterministic unit vectors in R^dim (axis directions first)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        theta = 2 * np.pi * np.arange(m) / m
        return np.column_stack([np.cos(theta), np.sin(theta)])
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    rest = max(m - axes.shape[0], 0)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((rest, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([axes, g])


def phi_envelope(problem: Problem, r, *, samples=128, safety=1.05):
    """Radial majorant phi(r) = max over |x| = r of a(x).

    Radial fields are returned exactly. Otherwise the maximum over
    ``samples`` sphere points is inflated by ``safety`` (>= 1) so the
    resulting barrier stays an upper bound.
    """
    if safety < 1:
        raise ValueError("safety factor must be >= 1")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be nonnegative")
    a = problem.a
    if a.radial:
        return eval_field(a, r_arr, radial=True)
    dirs = sphere_points(problem.dim, samples)
    flat = np.atleast_1d(r_arr).ravel()
    pts = flat[:, None, None] * dirs[None, :, :]
    vals = eval_field(a, pts, radial=False)
    env = vals.max(axis=1)
    env = np.where(env > 0, env * safety, env)
    if r_arr.ndim == 0:
        return float(env[0])
    return env.reshape(r_arr.shape)


def envelope_callable(problem: Problem, *, samples=128, safety=1.05):
    """Scalar phi(r) for quadrature loops."""
    a = problem.a
    if a.radial and a.table is None:
        fn = a._fn

        def phi(r):
            return float(fn({"r": r}))

        return phi
    return lambda r: float(phi_envelope(problem, r, samples=samples, safety=safety))


@dataclass(frozen=True)
class Sampling:
    """Sampling density for :func:`check_assumptions`."""

    n_radial: int = 400
    sphere_points: int = 128
    r_max: float = 1.0e4
    r_positivity: float = 100.0
    decade_points: int = 60
    fit_residual_max: float = 1.0e-2
    quad_rtol: float = 1.0e-12
    tail_tol: float = 1.0e-3
    rect_points: int = 101


@dataclass
class AssumptionReport:
    ac2_positive: str
    ac2_worst_value: float
    ac2_worst_field: str
    ac2_worst_location: str
    a3_verdict: str = "n/a"
    a3_integral: float | None = None
    a3_abserr: float | None = None
    a3_tail_bound: float | None = None
    mu_estimate: float | None = None
    mu_fit_residual: float | None = None
    mu_verdict: str = "unavailable"
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        """All checked hypotheses hold (A3 only matters in whole-space mode)."""
        if self.ac2_positive != "pass":
            return False
        return self.a3_verdict in ("finite", "n/a")

    def to_dict(self):
        return {
            "ac2_positive": self.ac2_positive,
            "ac2_worst_value": self.ac2_worst_value,
            "ac2_worst_field": self.ac2_worst_field,
            "ac2_worst_location": self.ac2_worst_location,
            "a3_verdict": self.a3_verdict,
            "a3_integral": self.a3_integral,
            "a3_abserr": self.a3_abserr,
            "a3_tail_bound": self.a3_tail_bound,
            "mu_estimate": self.mu_estimate,
            "mu_fit_residual": self.mu_fit_residual,
            "mu_verdict": self.mu_verdict,
            "passed": self.passed,
            "notes": list(self.notes),
        }

    def to_text(self):
        lines = [
            f"AC1 smoothness: not machine-checkable (fields evaluable and finite on samples)",
            f"AC2 positivity: {self.ac2_positive} (worst {self.ac2_worst_field}={self.ac2_worst_value:.6g} at {self.ac2_worst_location})",
        ]
        if self.a3_verdict == "n/a":
            lines.append("A3 integral: n/a (bounded domain)")
        else:
            val = "n/a" if self.a3_integral is None else f"{self.a3_integral:.12g}"
            lines.append(f"A3 integral of r*phi(r): {self.a3_verdict} (value {val})")
            if self.mu_estimate is None:
                lines.append(f"decay exponent mu: {self.mu_verdict}")
            else:
                lines.append(
                    f"decay exponent mu: {self.mu_estimate:.6g} ({self.mu_verdict}, fit residual {self.mu_fit_residual:.3g})"
                )
        lines.extend(f"note: {n}" for n in self.notes)
        lines.append(f"overall: {'pass' if self.passed else 'fail'}")
        return "\n".join(lines)


def _domain_samples(problem: Problem, sampling: Sampling):
    """Sample points (coordinates, radii) covering the domain."""
    dom = problem.domain
    if dom.kind == "rect":
        axes = [np.linspace(lo, hi, sampling.rect_points) for lo, hi in dom.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        return pts, None
    # whole-space positivity is sampled on a finite ball: fast-decaying fields
    # underflow to 0.0 long before r_max
    r_hi = dom.radius if dom.kind == "ball" else sampling.r_positivity
    radii = np.unique(
        np.concatenate(
            [np.linspace(0.0, r_hi, sampling.n_radial), np.geomspace(min(1e-3, r_hi), r_hi, sampling.n_radial)]
        )
    )
    if problem.radial:
        return None, radii
    dirs = sphere_points(problem.dim, sampling.sphere_points)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, problem.dim)
    return pts, None


def _fmt_location(pts, radii, idx):
    if radii is not None:
        return f"r={float(radii[idx])!r}"
    return "x=(" + ", ".join(f"{v:.6g}" for v in pts[idx]) + ")"


def check_assumptions(problem: Problem, sampling: Sampling | None = None) -> AssumptionReport:
    """Check positivity of a and c, integrability of r*phi(r) and the decay exponent.

    Positivity is checked on samples. For whole-space problems the integral
    of r*phi(r) over [0, inf) is computed adaptively and the decay exponent
    mu is the negated least-squares slope of ln(phi) against ln(r) over the
    last sampled decade.
    """
    sampling = sampling or Sampling()
    pts, radii = _domain_samples(problem, sampling)
    worst = (math.inf, "", "")
    for fld in (problem.a, problem.c):
        if radii is not None:
            vals = eval_field(fld, radii, radial=True)
        else:
            vals = eval_field(fld, pts, radial=False)
        i = int(np.argmin(vals))
        if vals[i] < worst[0]:
            worst = (float(vals[i]), fld.name, _fmt_location(pts, radii, i))
    report = AssumptionReport(
        ac2_positive="pass" if worst[0] > 0 else "fail",
        ac2_worst_value=worst[0],
        ac2_worst_field=worst[1],
        ac2_worst_location=worst[2],
    )
    report.notes.append("Hoelder continuity (AC1) is not verified; alpha recorded as metadata only")
    if problem.domain.kind != "wholespace":
        return report

    # far-field power law of the envelope
    far = np.geomspace(sampling.r_max / 10.0, sampling.r_max, sampling.decade_points)
    phi_far = np.asarray(phi_envelope(problem, far, samples=sampling.sphere_points), dtype=float)
    rapid = False
    slope = None
    if np.all(phi_far > 0) and np.all(np.isfinite(np.log(phi_far))):
        x = np.log(far)
        y = np.log(phi_far)
        slope, intercept = np.polyfit(x, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
        report.mu_fit_residual = resid
        if resid <= sampling.fit_residual_max:
            mu = -float(slope) + 0.0
            report.mu_estimate = mu
            report.mu_verdict = "admissible" if 2.0 < mu < problem.dim else "inadmissible"
        else:
            # curvature in log-log: decide whether the decay is faster than any power
            half = len(far) // 2
            s_end = np.polyfit(x[half:], y[half:], 1)[0]
            rapid = s_end < -4.0 and s_end < slope
            report.mu_verdict = "unavailable (not a power law)"
    else:
        rapid = bool(np.all(phi_far[len(phi_far) // 2:] <= 0.0)) or bool(phi_far[-1] <= 0)
        report.mu_verdict = "unavailable (envelope vanishes in far field)"

    if report.mu_estimate is not None and report.mu_estimate <= 2.0:
        report.a3_verdict = "divergent"
        report.notes.append(f"r*phi(r) decays like r^{1 - report.mu_estimate:.3g}: not integrable")
        return report

    phi = envelope_callable(problem, samples=sampling.sphere_points)
    try:
        value, abserr = integrate_halfline(lambda r: r * phi(r), rtol=sampling.quad_rtol)
    except (QuadratureError, FieldEvaluationError) as exc:
        report.a3_verdict = "undetermined"
        report.notes.append(f"quadrature did not converge: {exc}")
        return report
    report.a3_integral = value
    report.a3_abserr = abserr
    if report.mu_estimate is not None:
        mu = report.mu_estimate
        tail = float(phi_far[-1]) * sampling.r_max**2 / (mu - 2.0)
    elif rapid:
        tail = float(far[-1] * phi_far[-1]) if phi_far[-1] > 0 else 0.0
    else:
        tail = None
    report.a3_tail_bound = tail
    if tail is not None and tail <= sampling.tail_tol * max(abs(value), 1e-300):
        report.a3_verdict = "finite"
    else:
        report.a3_verdict = "undetermined"
        report.notes.append("far-field decay too slow or irregular to bound the tail")
    return report


# ---------------------------------------------------------------- problem files


def _parse_domain(value, dim, lineno):
    parts = value.split()
    if not parts:
        raise ProblemFileError("empty domain", lineno)
    kind = parts[0]
    if kind == "ball":
        if len(parts) != 2:
            raise ProblemFileError("expected 'ball R'", lineno)
        try:
            return DomainSpec("ball", radius=float(parts[1]))
        except ValueError as exc:
            raise ProblemFileError(str(exc), lineno) from None
    if kind == "rect":
        bounds = []
        for spec in parts[1:]:
            lo, sep, hi = spec.partition("..")
            if not sep:
                raise ProblemFileError(f"bad interval {spec!r}, expected lo..hi", lineno)
            try:
                bounds.append((float(lo), float(hi)))
            except ValueError:
                raise ProblemFileError(f"bad interval {spec!r}", lineno) from None
        try:
            return DomainSpec("rect", bounds=tuple(bounds))
        except ValueError as exc:
            raise ProblemFileError(str(exc), lineno) from None
    if kind == "wholespace":
        return DomainSpec("wholespace")
    raise ProblemFileError(f"unknown domain kind {kind!r}", lineno)


def parse_problem_text(text: str, *, base_dir=None, path=None) -> Problem:
    """Parse the line-oriented ``key = value`` problem format.

    Keys: ``dim``, ``domain``, ``a``, ``c``, ``a_table``, ``c_table``,
    ``interp`` (table rule) and ``alpha`` (Hoelder exponent metadata).
    """
    entries = {}
    positions = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ProblemFileError("expected 'key = value'", lineno, 1, path)
        key = key.strip()
        value = value.strip()
        if key not in {"dim", "domain", "a", "c", "a_table", "c_table", "interp", "alpha"}:
            raise ProblemFileError(f"unknown key {key!r}", lineno, 1, path)
        if key in entries:
            raise ProblemFileError(f"duplicate key {key!r}", lineno, 1, path)
        entries[key] = value
        after = raw.index("=") + 1
        positions[key] = (lineno, after + len(raw[after:]) - len(raw[after:].lstrip()) + 1)
    for required in ("dim", "domain"):
        if required not in entries:
            raise ProblemFileError(f"missing key {required!r}", path=path)
    try:
        dim = int(entries["dim"])
    except ValueError:
        raise ProblemFileError(f"dim must be an integer, got {entries['dim']!r}", positions["dim"][0], path=path) from None
    domain = _parse_domain(entries["domain"], dim, positions["domain"][0])
    rule = entries.get("interp", "pchip")
    base = Path(base_dir) if base_dir is not None else Path(".")

    def build(name):
        expr_key, table_key = name, f"{name}_table"
        if (expr_key in entries) == (table_key in entries):
            raise ProblemFileError(f"give exactly one of {expr_key!r} or {table_key!r}", path=path)
        if expr_key in entries:
            lineno, col = positions[expr_key]
            try:
                return CoefficientField(entries[expr_key], dim=dim, name=name)
            except ExpressionError as exc:
                column = col + (exc.position or 0)
                raise ProblemFileError(f"in {name}: {exc.args[0].splitlines()[0]}", lineno, column, path) from None
        lineno, _ = positions[table_key]
        try:
            table = RadialTable.from_file(base / entries[table_key], rule=rule)
        except (OSError, ValueError) as exc:
            raise ProblemFileError(f"in {table_key}: {exc}", lineno, path=path) from None
        return CoefficientField(table=table, dim=dim, name=name)

    a = build("a")
    if "c" not in entries and "c_table" not in entries:
        raise ProblemFileError("missing key 'c'", path=path)
    c = build("c")
    alpha = None
    if "alpha" in entries:
        alpha = float(entries["alpha"])
        if not 0 < alpha < 1:
            raise ProblemFileError("alpha must lie in (0, 1)", positions["alpha"][0], path=path)
    try:
        return Problem(dim, a, c, domain, alpha, source_text=text)
    except ValueError as exc:
        raise ProblemFileError(str(exc), path=path) from None


def load_problem(path) -> Problem:
    path = Path(path)
    return parse_problem_text(path.read_text(), base_dir=path.parent, path=str(path))
