"""Grids, the discrete Laplacian and gradient, and linear solves.

Radial problems use a finite-volume form of

    -(1/r^(N-1)) d/dr (r^(N-1) du/dr)

with cell volumes (r_{i+1/2}^N - r_{i-1/2}^N)/N. It is exact on quadratics,
reduces to the reflected ghost-node row -2N (u_1 - u_0)/h^2 at r = 0, and is
an M-matrix for every N. Rectangles use the 5-point stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

__all__ = [
    "LinearSolveError",
    "RadialGrid",
    "IntervalGrid",
    "RectGrid",
    "DiscreteField",
    "LinearOperator",
    "build_radial_laplacian",
    "build_laplacian",
    "gradient_operators",
    "discrete_gradient_sq",
    "solve_linear",
    "solve_sparse",
    "solve_dirichlet",
]


class LinearSolveError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


# ---------------------------------------------------------------------- grids


class RadialGrid:
    """Nodes 0 = r_0 < ... < r_{n-1} = R; Dirichlet at R, symmetry at 0.

    ``grading`` in [0, 1) clusters nodes geometrically near both r = 0 and
    r = R through r = R (s - g sin(2 pi s) / (2 pi)).
    """

    kind = "radial"

    def __init__(self, R, n, grading=0.0, nodes=None):
        if nodes is not None:
            nodes = np.asarray(nodes, dtype=float)
            n = nodes.size
            R = float(nodes[-1])
        if n < 3:
            raise ValueError("a radial grid needs at least 3 nodes")
        if not R > 0:
            raise ValueError("outer radius must be positive")
        if not 0.0 <= grading < 1.0:
            raise ValueError("grading must lie in [0, 1)")
        if nodes is None:
            s = np.linspace(0.0, 1.0, n)
            nodes = R * (s - grading * np.sin(2 * np.pi * s) / (2 * np.pi))
            nodes[0], nodes[-1] = 0.0, R
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("radial nodes must start at 0 and increase strictly")
        self.R = float(R)
        self.n = int(n)
        self.grading = float(grading)
        self.nodes = nodes
        self.nodes.setflags(write=False)

    @property
    def size(self):
        return self.n

    @property
    def boundary(self):
        mask = np.zeros(self.n, dtype=bool)
        mask[-1] = True
        return mask

    @property
    def h(self):
        return float(np.max(np.diff(self.nodes)))

    @property
    def radii(self):
        return self.nodes

    def cell_volumes(self, N):
        """Volume of each node's control cell divided by the sphere area constant."""
        mid = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        lo = np.concatenate([[0.0], mid])
        hi = np.concatenate([mid, [self.R]])
        return (hi**N - lo**N) / N

    def same_as(self, other):
        return isinstance(other, RadialGrid) and np.array_equal(self.nodes, other.nodes)

    def __repr__(self):
        return f"RadialGrid(R={self.R!r}, n={self.n})"


class IntervalGrid:
    """Nodes on [lo, hi] with Dirichlet data at both ends (1-D only)."""

    kind = "interval"

    def __init__(self, lo, hi, n, nodes=None):
        if nodes is None:
            if n < 3:
                raise ValueError("an interval grid needs at least 3 nodes")
            nodes = np.linspace(lo, hi, n)
        nodes = np.asarray(nodes, dtype=float)
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must increase strictly")
        self.lo = float(nodes[0])
        self.hi = float(nodes[-1])
        self.n = nodes.size
        self.nodes = nodes
        self.nodes.setflags(write=False)

    @property
    def size(self):
        return self.n

    @property
    def boundary(self):
        mask = np.zeros(self.n, dtype=bool)
        mask[0] = mask[-1] = True
        return mask

    @property
    def h(self):
        return float(np.max(np.diff(self.nodes)))

    def cell_volumes(self, N=1):
        mid = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        lo = np.concatenate([[self.lo], mid])
        hi = np.concatenate([mid, [self.hi]])
        return hi - lo

    def same_as(self, other):
        return isinstance(other, IntervalGrid) and np.array_equal(self.nodes, other.nodes)

    def __repr__(self):
        return f"IntervalGrid({self.lo!r}, {self.hi!r}, n={self.n})"


class RectGrid:
    """Uniform tensor grid on [x0, x1] x [y0, y1].

    ``mask_radius`` embeds the disk of that radius (centered at the origin):
    nodes outside it become Dirichlet rows, like the rectangle edges.
    """

    kind = "rect2d"

    def __init__(self, bounds, shape, mask_radius=None):
        (x0, x1), (y0, y1) = bounds
        nx, ny = shape
        if nx < 3 or ny < 3:
            raise ValueError("each axis needs at least 3 nodes")
        self.bounds = ((float(x0), float(x1)), (float(y0), float(y1)))
        self.shape = (int(nx), int(ny))
        self.x = np.linspace(x0, x1, nx)
        self.y = np.linspace(y0, y1, ny)
        self.mask_radius = mask_radius
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        self.coords = np.column_stack([X.ravel(), Y.ravel()])
        edge = np.zeros(self.shape, dtype=bool)
        edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
        edge = edge.ravel()
        if mask_radius is not None:
            edge |= np.hypot(self.coords[:, 0], self.coords[:, 1]) >= mask_radius * (1 - 1e-12)
        self._boundary = edge
        self._boundary.setflags(write=False)

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    @property
    def boundary(self):
        return self._boundary

    @property
    def hx(self):
        return float(self.x[1] - self.x[0])

    @property
    def hy(self):
        return float(self.y[1] - self.y[0])

    @property
    def h(self):
        return max(self.hx, self.hy)

    @property
    def radii(self):
        return np.hypot(self.coords[:, 0], self.coords[:, 1])

    def cell_volumes(self, N=2):
        return np.full(self.size, self.hx * self.hy)

    def corner_adjacent(self):
        """Interior nodes touching a rectangle corner cell (nonsmooth boundary)."""
        nx, ny = self.shape
        mask = np.zeros(self.shape, dtype=bool)
        for i in (1, nx - 2):
            for j in (1, ny - 2):
                mask[i, j] = True
        return mask.ravel() & ~self.boundary

    def same_as(self, other):
        return (
            isinstance(other, RectGrid)
            and self.bounds == other.bounds
            and self.shape == other.shape
            and self.mask_radius == other.mask_radius
        )

    def __repr__(self):
        return f"RectGrid({self.bounds!r}, {self.shape!r})"


# --------------------------------------------------------------------- fields


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Nodal values on a grid. Values are copied and frozen."""

    grid: object
    values: np.ndarray
    dim: int | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values):
        return DiscreteField(self.grid, values, self.dim)

    def __add__(self, other):
        other = other.values if isinstance(other, DiscreteField) else other
        return self.with_values(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, DiscreteField) else other
        return self.with_values(self.values - other)

    def max(self):
        return float(self.values.max())

    def min(self):
        return float(self.values.min())


# ------------------------------------------------------------------ operators


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Discrete -Laplace with Dirichlet rows baked in as identity rows."""

    grid: object
    matrix: sp.csr_matrix
    dirichlet: np.ndarray
    dim: int
    kind: str
    weights: np.ndarray = field(repr=False)

    def apply(self, u):
        u = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
        return self.matrix @ u

    def __matmul__(self, u):
        return self.apply(u)

    @property
    def interior(self):
        return ~self.dirichlet

    def interior_block(self):
        idx = np.flatnonzero(~self.dirichlet)
        return self.matrix[idx][:, idx].tocsc(), idx


def _fv_rows(nodes, power):
    """Lower/diag/upper coefficients of the finite-volume -Laplacian.

    ``power`` is the radial weight exponent N-1 (0 for a plain interval).
    """
    n = nodes.size
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    h = np.diff(nodes)
    flux = mid**power / h  # coupling across face i+1/2
    lo_edge = np.concatenate([[nodes[0]], mid])
    hi_edge = np.concatenate([mid, [nodes[-1]]])
    if power == 0:
        vol = hi_edge - lo_edge
    else:
        N = power + 1
        vol = (hi_edge**N - lo_edge**N) / N
    lower = np.zeros(n)
    upper = np.zeros(n)
    diag = np.zeros(n)
    upper[:-1] = -flux / vol[:-1]
    lower[1:] = -flux / vol[1:]
    diag[:-1] += flux / vol[:-1]
    diag[1:] += flux / vol[1:]
    return lower, diag, upper, vol


def _tridiag_matrix(lower, diag, upper, dirichlet):
    lower = lower.copy()
    diag = diag.copy()
    upper = upper.copy()
    lower[dirichlet] = 0.0
    upper[dirichlet] = 0.0
    diag[dirichlet] = 1.0
    n = diag.size
    return sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n), format="csr")


def build_radial_laplacian(grid: RadialGrid, N: int) -> LinearOperator:
    """-Laplace for radial functions on B_R in R^N (N >= 1)."""
    if N < 1:
        raise ValueError("dimension must be >= 1")
    if not isinstance(grid, RadialGrid):
        raise TypeError("build_radial_laplacian needs a RadialGrid")
    lower, diag, upper, vol = _fv_rows(grid.nodes, N - 1)
    dirichlet = grid.boundary
    A = _tridiag_matrix(lower, diag, upper, dirichlet)
    return LinearOperator(grid, A, dirichlet, N, "tridiagonal", vol)


def _interval_laplacian(grid: IntervalGrid) -> LinearOperator:
    lower, diag, upper, vol = _fv_rows(grid.nodes, 0)
    dirichlet = grid.boundary
    A = _tridiag_matrix(lower, diag, upper, dirichlet)
    return LinearOperator(grid, A, dirichlet, 1, "tridiagonal", vol)


def _second_diff_1d(n, h):
    e = np.ones(n)
    return sp.diags([-e[1:], 2 * e, -e[1:]], [-1, 0, 1], shape=(n, n)) / (h * h)


def _rect_laplacian(grid: RectGrid) -> LinearOperator:
    nx, ny = grid.shape
    Lx = _second_diff_1d(nx, grid.hx)
    Ly = _second_diff_1d(ny, grid.hy)
    A = (sp.kron(Lx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ly)).tocsr()
    dirichlet = grid.boundary
    A = A.tolil()
    for i in np.flatnonzero(dirichlet):
        A.rows[i] = [int(i)]
        A.data[i] = [1.0]
    A = A.tocsr()
    return LinearOperator(grid, A, dirichlet, 2, "stencil5", grid.cell_volumes())


def build_laplacian(grid, N: int | None = None) -> LinearOperator:
    """Dispatch on grid type; ``N`` is only used by radial grids."""
    if isinstance(grid, RadialGrid):
        return build_radial_laplacian(grid, N if N is not None else 1)
    if isinstance(grid, IntervalGrid):
        if N not in (None, 1):
            raise ValueError("interval grids are one-dimensional")
        return _interval_laplacian(grid)
    if isinstance(grid, RectGrid):
        if N not in (None, 2):
            raise ValueError("rectangle grids are two-dimensional")
        return _rect_laplacian(grid)
    raise TypeError(f"unsupported grid {grid!r}")


# ------------------------------------------------------------------ gradients


def _diff_matrix_1d(x):
    """Second-order first-derivative matrix (centered inside, one-sided at ends)."""
    n = x.size
    h = np.diff(x)
    i = np.arange(1, n - 1)
    hm, hp = h[:-1], h[1:]
    rows = [i, i, i]
    cols = [i - 1, i, i + 1]
    vals = [-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))]
    h1, h2 = h[0], h[1]
    rows.append(np.zeros(3, dtype=int))
    cols.append(np.array([0, 1, 2]))
    vals.append(np.array([-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))]))
    h1, h2 = h[-2], h[-1]
    rows.append(np.full(3, n - 1))
    cols.append(np.array([n - 3, n - 2, n - 1]))
    vals.append(np.array([h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (2 * h2 + h1) / (h2 * (h1 + h2))]))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def gradient_operators(grid) -> list:
    """Sparse first-derivative matrices, one per Cartesian direction.

    For radial grids the single matrix is d/dr with the r = 0 row zeroed
    (u'(0) = 0 by symmetry).
    """
    if isinstance(grid, RadialGrid):
        D = _diff_matrix_1d(np.asarray(grid.nodes)).tolil()
        D.rows[0] = []
        D.data[0] = []
        return [D.tocsr()]
    if isinstance(grid, IntervalGrid):
        return [_diff_matrix_1d(np.asarray(grid.nodes))]
    if isinstance(grid, RectGrid):
        nx, ny = grid.shape
        Dx = sp.kron(_diff_matrix_1d(grid.x), sp.identity(ny)).tocsr()
        Dy = sp.kron(sp.identity(nx), _diff_matrix_1d(grid.y)).tocsr()
        return [Dx, Dy]
    raise TypeError(f"unsupported grid {grid!r}")


def discrete_gradient_sq(u: DiscreteField, N: int | None = None) -> DiscreteField:
    """Nodal |grad u|^2 (for radial fields, (u')^2)."""
    total = np.zeros(u.grid.size)
    for D in gradient_operators(u.grid):
        g = D @ u.values
        total += g * g
    return DiscreteField(u.grid, total, u.dim)


# -------------------------------------------------------------------- solvers

_EPS = np.finfo(float).eps


def _as_values(x, n):
    if isinstance(x, DiscreteField):
        return np.array(x.values)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    return np.array(arr, dtype=float).ravel()


def _banded(A):
    A = sp.dia_matrix(A)
    n = A.shape[0]
    ab = np.zeros((3, n))
    for offset, data in zip(A.offsets, A.data):
        if offset == 1:
            ab[0, 1:] = data[1:]
        elif offset == 0:
            ab[1, :] = data
        elif offset == -1:
            ab[2, :-1] = data[:-1]
        elif np.any(data):
            raise ValueError("matrix is not tridiagonal")
    return ab


def solve_sparse(A, b, kind="general"):
    """Direct solve; tridiagonal systems go through the banded LAPACK solver."""
    if kind == "tridiagonal":
        return solve_banded((1, 1), _banded(A), b)
    return spla.spsolve(sp.csc_matrix(A), b)


def solve_dirichlet(A, b, dirichlet, kind="general"):
    """Solve with identity rows at ``dirichlet`` eliminated first.

    Keeping them in a pivoted LU lets pivoting swap them with their
    neighbours, which leaves round-off in values that must be exact.
    """
    A = sp.csr_matrix(A)
    idx = np.flatnonzero(~dirichlet)
    bnd = np.flatnonzero(dirichlet)
    x = np.array(b, dtype=float)
    rhs = x[idx] - A[idx][:, bnd] @ x[bnd]
    x[idx] = solve_sparse(A[idx][:, idx], rhs, kind)
    return x


def _jacobi_cg(A, b, x0, rtol, maxiter):
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    return x, info, iterations


def solve_linear(op: LinearOperator, rhs, bc=0.0, *, rtol=1e-12, maxiter=None) -> DiscreteField:
    """Solve op u = rhs at interior rows with u = bc on Dirichlet rows.

    Tridiagonal operators are solved directly; 5-point operators by
    Jacobi-preconditioned conjugate gradients on the interior block. The
    residual is checked against 1e-12 (||rhs|| + 1) plus the backward-error
    floor 64 eps ||A|| ||u|| that no floating-point solve can beat.
    """
    n = op.grid.size
    f = _as_values(rhs, n)
    g = _as_values(bc, n)
    b = np.where(op.dirichlet, g, f)
    if op.kind == "tridiagonal":
        u = solve_dirichlet(op.matrix, b, op.dirichlet, "tridiagonal")
        iterations = 1
    else:
        Aii, idx = op.interior_block()
        bnd = np.flatnonzero(op.dirichlet)
        Aib = op.matrix[idx][:, bnd]
        bi = b[idx] - Aib @ g[bnd]
        x, info, iterations = _jacobi_cg(Aii.tocsr(), bi, None, rtol, maxiter or 20 * idx.size)
        if info != 0:
            raise LinearSolveError(f"conjugate gradients did not converge (info={info})", iterations)
        u = g.copy()
        u[idx] = x
    if not np.all(np.isfinite(u)):
        raise LinearSolveError("linear solve produced non-finite values", iterations)
    res = op.matrix @ u - b
    norm_a = float(abs(op.matrix).sum(axis=1).max())
    limit = 1e-12 * (np.max(np.abs(f[op.interior]), initial=0.0) + 1.0) + 64 * _EPS * norm_a * np.max(np.abs(u))
    if op.kind != "tridiagonal":
        limit = max(limit, rtol * np.linalg.norm(b))
    rnorm = float(np.max(np.abs(res)))
    if rnorm > limit:
        raise LinearSolveError(f"residual {rnorm:.3e} exceeds {limit:.3e}", iterations, rnorm)
    return DiscreteField(op.grid, u)
