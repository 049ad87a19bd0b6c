"""Bind a :class:`Problem` to a grid: operator, gradient matrices, nodal a and c."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .discretization import (
    DiscreteField,
    IntervalGrid,
    LinearOperator,
    RadialGrid,
    RectGrid,
    build_laplacian,
    gradient_operators,
)
from .problem import DomainSpec, Problem, eval_field

__all__ = ["DiscreteProblem", "make_grid", "discretize"]


def make_grid(problem: Problem, n: int, *, grading=0.0, radius=None):
    """Default grid for a bounded problem (``radius`` overrides a ball's R).

    Radial problems on balls get a :class:`RadialGrid`; 1-D rectangles an
    :class:`IntervalGrid`; 2-D rectangles, and 2-D balls with non-radial
    coefficients, a :class:`RectGrid` with ``n`` nodes per axis.
    """
    dom = problem.domain
    if dom.kind == "wholespace":
        if radius is None:
            raise ValueError("whole-space problems need an explicit ball radius")
        dom = DomainSpec("ball", radius=radius)
    elif radius is not None and dom.kind == "ball":
        dom = DomainSpec("ball", radius=radius)
    if dom.kind == "ball":
        if problem.a.radial and problem.c.radial:
            return RadialGrid(dom.radius, n, grading=grading)
        if problem.dim == 2:
            R = dom.radius
            return RectGrid(((-R, R), (-R, R)), (n, n), mask_radius=R)
        raise ValueError("non-radial coefficients on a ball are supported only for dim = 2")
    if problem.dim == 1:
        (lo, hi), = dom.bounds
        return IntervalGrid(lo, hi, n)
    if problem.dim == 2:
        return RectGrid(dom.bounds, (n, n))
    raise ValueError("rectangles are supported for dim 1 and 2 only")


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    problem: Problem
    grid: object
    op: LinearOperator
    grads: tuple
    a: np.ndarray
    c: np.ndarray

    @property
    def dim(self):
        return self.problem.dim

    @property
    def interior(self):
        return ~self.op.dirichlet

    @property
    def boundary(self):
        return self.op.dirichlet

    @cached_property
    def a_scale(self):
        return max(float(np.max(np.abs(self.a[self.interior]))), 1.0)

    def field(self, values):
        return DiscreteField(self.grid, values, self.dim)

    def grad_sq(self, u):
        total = np.zeros_like(u)
        for D in self.grads:
            g = D @ u
            total += g * g
        return total


def _node_values(fld, grid, problem):
    if isinstance(grid, RadialGrid):
        if not fld.radial:
            raise ValueError(f"field {fld.name!r} is not radial; a radial grid cannot represent it")
        return eval_field(fld, np.asarray(grid.nodes), radial=True)
    if isinstance(grid, IntervalGrid):
        return eval_field(fld, np.asarray(grid.nodes)[:, None], radial=False)
    if isinstance(grid, RectGrid):
        return eval_field(fld, grid.coords, radial=False)
    raise TypeError(f"unsupported grid {grid!r}")


def discretize(problem: Problem, grid) -> DiscreteProblem:
    N = problem.dim
    if isinstance(grid, RectGrid) and N != 2:
        raise ValueError("rectangle grids need dim = 2")
    if isinstance(grid, IntervalGrid) and N != 1:
        raise ValueError("interval grids need dim = 1")
    op = build_laplacian(grid, N)
    a = np.asarray(_node_values(problem.a, grid, problem), dtype=float)
    c = np.asarray(_node_values(problem.c, grid, problem), dtype=float)
    for arr in (a, c):
        arr.setflags(write=False)
    return DiscreteProblem(problem, grid, op, tuple(gradient_operators(grid)), a, c)
