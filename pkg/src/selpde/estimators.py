"""scikit-learn style wrappers around the solvers.

``fit`` takes a :class:`Problem` (or a path to a problem file) in place of
a data matrix; ``predict`` evaluates the fitted field at radii or points.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .assembly import discretize, make_grid
from .barriers import build_bracket
from .discretization import RectGrid
from .global_solver import RadialBarrier, decay_fit, default_schedule, epsilon_continuation, exhaust
from .problem import Problem, check_assumptions, load_problem
from .transforms import TransformSpec, forward_map, inverse_map
from .truncated import TruncatedSolveOptions

__all__ = ["BoundedSolver", "GlobalSolver", "BlowUpTransformer"]


def _problem(p):
    return p if isinstance(p, Problem) else load_problem(p)


class BoundedSolver(BaseEstimator):
    """Bracket plus eps-continuation on a bounded domain.

    Fitted attributes: ``solution_`` (DiscreteField), ``bracket_``
    (BracketPair), ``report_`` (ContinuationTrace), ``grid_``.
    """

    def __init__(self, grid_nodes=513, mode="eigen", schedule=None, epsilon_floor=None,
                 tol_residual=1e-10, tol_cauchy=1e-6, radius=None):
        self.grid_nodes = grid_nodes
        self.mode = mode
        self.schedule = schedule
        self.epsilon_floor = epsilon_floor
        self.tol_residual = tol_residual
        self.tol_cauchy = tol_cauchy
        self.radius = radius

    def fit(self, problem, y=None):
        problem = _problem(problem)
        if not problem.domain.bounded:
            raise ValueError("BoundedSolver needs a bounded domain; use GlobalSolver")
        grid = make_grid(problem, self.grid_nodes, radius=self.radius)
        disc = discretize(problem, grid)
        schedule = list(self.schedule) if self.schedule is not None else default_schedule(20, floor=self.epsilon_floor)
        bracket = build_bracket(disc, epsilon=schedule[0], mode=self.mode)
        u, trace = epsilon_continuation(
            disc, schedule=schedule, opts=TruncatedSolveOptions(tol_residual=self.tol_residual),
            tol_cauchy=self.tol_cauchy, bracket=bracket,
        )
        self.problem_ = problem
        self.grid_ = grid
        self.bracket_ = bracket
        self.report_ = trace
        self.solution_ = u
        return self

    def predict(self, X):
        """Linear interpolation of u: radii (radial / 1-D grids) or (m, 2) points."""
        check_is_fitted(self, "solution_")
        g = self.grid_
        vals = np.asarray(self.solution_.values)
        X = np.asarray(X, dtype=float)
        if isinstance(g, RectGrid):
            interp = RegularGridInterpolator((g.x, g.y), vals.reshape(g.shape), bounds_error=False, fill_value=0.0)
            return interp(np.atleast_2d(X))
        return np.interp(X, g.nodes, vals, left=np.nan, right=0.0)

    def score(self, X, y):
        """Negative max error against reference values ``y`` at ``X``."""
        return -float(np.max(np.abs(self.predict(X) - np.asarray(y))))


class GlobalSolver(BaseEstimator):
    """Ball exhaustion for a whole-space problem.

    Fitted attributes: ``solution_`` (GlobalSolution), ``barrier_``,
    ``assumptions_`` and ``decay_`` (None when the decay exponent is not
    admissible).
    """

    def __init__(self, R0=2.0, k_max=4, nodes_per_unit=64, tol_exhaust=1e-5, tol_cauchy=1e-6,
                 mode="eigen", warm_start=True):
        self.R0 = R0
        self.k_max = k_max
        self.nodes_per_unit = nodes_per_unit
        self.tol_exhaust = tol_exhaust
        self.tol_cauchy = tol_cauchy
        self.mode = mode
        self.warm_start = warm_start

    def fit(self, problem, y=None):
        problem = _problem(problem)
        report = check_assumptions(problem)
        if not report.passed:
            raise ValueError("hypotheses not satisfied:\n" + report.to_text())
        self.assumptions_ = report
        self.barrier_ = RadialBarrier.from_problem(problem)
        self.solution_ = exhaust(
            problem, R0=self.R0, k_max=self.k_max, nodes_per_unit=self.nodes_per_unit,
            tol_exhaust=self.tol_exhaust, tol_cauchy=self.tol_cauchy, mode=self.mode,
            warm_start=self.warm_start, barrier=self.barrier_,
        )
        self.decay_ = None
        if report.mu_verdict == "admissible" and self.solution_.final.grid.R >= 10 * self.R0:
            self.decay_ = decay_fit(self.solution_, report.mu_estimate)
        return self

    def predict(self, r):
        check_is_fitted(self, "solution_")
        return self.solution_(r)


class BlowUpTransformer(TransformerMixin, BaseEstimator):
    """``transform``: u -> w; ``inverse_transform``: w -> u (nodal arrays)."""

    def __init__(self, kind="exponential", delta=None):
        self.kind = kind
        self.delta = delta

    def fit(self, X=None, y=None):
        self.spec_ = TransformSpec(self.kind, self.delta)
        self.c_star_ = self.spec_.c_star
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return forward_map(self.spec_, np.asarray(X, dtype=float))

    def inverse_transform(self, X):
        check_is_fitted(self, "spec_")
        return inverse_map(self.spec_, np.asarray(X, dtype=float))
