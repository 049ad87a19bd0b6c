"""Numerical workbench for -Laplace(u) + c(x) |grad u|^2 / u = a(x)."""

from .assembly import DiscreteProblem, discretize, make_grid
from .barriers import BracketError, BracketPair, build_bracket, poisson_supersolution, verify_subsolution_residual
from .discretization import (
    DiscreteField,
    IntervalGrid,
    LinearOperator,
    RadialGrid,
    RectGrid,
    build_laplacian,
    build_radial_laplacian,
    discrete_gradient_sq,
    solve_linear,
)
from .eigen import EigenResult, extrema_stats, first_eigenpair, richardson_eigenvalue
from .estimators import BlowUpTransformer, BoundedSolver, GlobalSolver
from .expr import ExpressionError, evaluate, parse_expression, to_source
from .global_solver import (
    RadialBarrier,
    barrier_bound_K,
    barrier_w,
    barrier_w_nested,
    decay_fit,
    epsilon_continuation,
    exhaust,
)
from .problem import (
    CoefficientField,
    DomainSpec,
    Problem,
    RadialTable,
    check_assumptions,
    eval_field,
    load_problem,
    parse_problem_text,
    phi_envelope,
)
from .transforms import TransformSpec, forward_map, inverse_map, verify_transform_residual
from .truncated import TruncatedSolveOptions, residual, solve_truncated, verify_uniqueness

__version__ = "0.1.0"
