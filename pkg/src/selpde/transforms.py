"""Changes of variable between Delta u = a h(u) (u -> inf on the boundary) and
-Delta w + c* |grad w|^2 / w = a (w -> 0 on the boundary).

    exponential  h(u) = e^u       w = e^-u           c* = 1
    power        h(u) = u^delta   w = C u^(-1/C)     c* = delta C,  C = 1/(delta - 1)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import DiscreteField, RadialGrid, RectGrid, IntervalGrid, build_laplacian
from .problem import CoefficientField, eval_field

__all__ = [
    "TransformError",
    "TransformSpec",
    "forward_map",
    "inverse_map",
    "round_trip_error",
    "TransformResidual",
    "verify_transform_residual",
    "interior_window",
]


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "power"):
            raise TransformError(f"unknown transform kind {self.kind!r}")
        if self.kind == "power" and not (self.delta is not None and self.delta > 1):
            raise TransformError("the power transform needs delta > 1")

    @property
    def C(self):
        return None if self.kind == "exponential" else 1.0 / (self.delta - 1.0)

    @property
    def c_star(self):
        """Constant gradient coefficient of the transformed problem."""
        return 1.0 if self.kind == "exponential" else self.delta * self.C

    def h(self, u):
        return np.exp(u) if self.kind == "exponential" else np.power(u, self.delta)


def _values(f):
    return np.asarray(f.values if isinstance(f, DiscreteField) else f, dtype=float)


def _wrap(f, values):
    return f.with_values(values) if isinstance(f, DiscreteField) else values


def forward_map(spec: TransformSpec, u):
    """u -> w (nodal)."""
    x = _values(u)
    if spec.kind == "exponential":
        if not np.all(np.isfinite(x)):
            raise TransformError("u must be finite")
        return _wrap(u, np.exp(-x))
    if not np.all(x > 0):
        i = int(np.argmin(x))
        raise TransformError(f"power transform needs u > 0; u[{i}] = {float(x[i])!r}")
    return _wrap(u, spec.C * x ** (-1.0 / spec.C))


def inverse_map(spec: TransformSpec, w):
    """w -> u (nodal); w must be positive."""
    x = _values(w)
    if not np.all(x > 0):
        i = int(np.argmin(x))
        raise TransformError(f"inverse transform needs w > 0; w[{i}] = {float(x[i])!r}")
    if spec.kind == "exponential":
        return _wrap(w, -np.log(x))
    return _wrap(w, (x / spec.C) ** (-spec.C))


def round_trip_error(spec: TransformSpec, u):
    """max |inverse(forward(u)) - u| / |u|."""
    x = _values(u)
    back = _values(inverse_map(spec, forward_map(spec, x)))
    scale = np.maximum(np.abs(x), np.finfo(float).tiny)
    return float(np.max(np.abs(back - x) / scale))


def interior_window(grid, fraction=0.05):
    """Boolean mask of nodes at least ``fraction`` of the size away from the boundary."""
    if isinstance(grid, RadialGrid):
        return np.asarray(grid.nodes) <= (1.0 - fraction) * grid.R
    if isinstance(grid, IntervalGrid):
        x = np.asarray(grid.nodes)
        margin = fraction * (grid.hi - grid.lo) / 2
        return (x >= grid.lo + margin) & (x <= grid.hi - margin)
    if isinstance(grid, RectGrid):
        pts = grid.coords
        keep = ~grid.boundary
        if grid.mask_radius is not None:
            keep &= np.linalg.norm(pts, axis=1) <= (1.0 - fraction) * grid.mask_radius
        for k, (lo, hi) in enumerate(grid.bounds):
            margin = fraction * (hi - lo) / 2
            keep &= (pts[:, k] >= lo + margin) & (pts[:, k] <= hi - margin)
        return keep
    raise TypeError(f"unsupported grid {grid!r}")


@dataclass(frozen=True)
class TransformResidual:
    max_residual: float
    nodes: np.ndarray
    residual: np.ndarray
    fraction: float

    @property
    def n_window(self):
        return int(self.nodes.size)

    def csv_rows(self, grid):
        coords = grid.coords if isinstance(grid, RectGrid) else np.asarray(grid.nodes)[:, None]
        rows = ["node," + ",".join(f"x{k + 1}" for k in range(coords.shape[1])) + ",residual"]
        for i, res in zip(self.nodes, self.residual):
            rows.append(f"{i}," + ",".join(f"{v:.17g}" for v in coords[i]) + f",{res:.17g}")
        return "\n".join(rows) + "\n"


def _nodal_a(a, grid, idx):
    """a at the window nodes only (it may blow up on the boundary)."""
    if isinstance(a, CoefficientField):
        if isinstance(grid, RadialGrid):
            return eval_field(a, np.asarray(grid.nodes)[idx], radial=True)
        if isinstance(grid, RectGrid):
            return eval_field(a, grid.coords[idx], radial=False)
        return eval_field(a, np.asarray(grid.nodes)[idx, None], radial=False)
    return np.broadcast_to(np.asarray(a, dtype=float), (grid.size,))[idx]


def verify_transform_residual(spec: TransformSpec, a, w: DiscreteField, grid=None, N=None, *, fraction=0.05):
    """Residual Delta_h u - a h(u) of u = inverse_map(w) on the interior window.

    Nodes within ``fraction`` of the size of the domain from the boundary
    are excluded: u blows up there. Stencils of window rows must not reach
    nodes with w <= 0.
    """
    grid = grid if grid is not None else w.grid
    N = N if N is not None else (w.dim or 1)
    op = build_laplacian(grid, N)
    win = interior_window(grid, fraction) & ~op.dirichlet
    idx = np.flatnonzero(win)
    if idx.size == 0:
        raise TransformError("interior window is empty")
    wv = _values(w)
    pos = wv > 0
    rows = op.matrix[idx]
    if np.any(abs(rows[:, ~pos]).sum(axis=1) > 0):
        raise TransformError("window stencils reach nodes with w <= 0; widen the excluded layer")
    u = np.zeros_like(wv)
    u[pos] = _values(inverse_map(spec, wv[pos]))
    lap = -(rows @ u)
    res = lap - _nodal_a(a, grid, idx) * spec.h(u[idx])
    return TransformResidual(float(np.max(np.abs(res))), idx, res, fraction)
