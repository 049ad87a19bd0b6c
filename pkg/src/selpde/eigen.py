"""First Dirichlet eigenpair of the discrete -Laplacian by inverse iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .discretization import DiscreteField, LinearOperator, build_laplacian, discrete_gradient_sq

__all__ = [
    "EigenError",
    "EigenResult",
    "first_eigenpair",
    "extrema_stats",
    "richardson_eigenvalue",
]


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenResult:
    lambda1: float
    phi1: DiscreteField
    residual: float
    iterations: int


def first_eigenpair(
    op: LinearOperator, tol: float = 1e-12, max_iter: int = 500, residual_tol: float = 1e-9
) -> EigenResult:
    """Smallest eigenvalue and positive eigenvector, normalized to max 1.

    Plain inverse iteration (shift 0) with one factorization of the interior
    block; the eigenvalue estimate is the Rayleigh quotient in the grid's
    volume-weighted inner product, in which the operator is symmetric.
    Stops when successive estimates differ by less than ``tol`` relative
    and the eigen-residual is below ``residual_tol * lambda``.
    """
    A, idx = op.interior_block()
    w = op.weights[idx]
    lu = spla.splu(A)
    # below this the residual is round-off, not iteration error
    floor = 100 * np.finfo(float).eps * float(abs(A).sum(axis=1).max())
    x = np.ones(idx.size)
    lam_old = None
    lam = np.nan
    for it in range(1, max_iter + 1):
        y = lu.solve(x)
        if np.max(y) <= 0:
            y = -y
        if np.min(y) <= 0:
            raise EigenError(f"iterate lost positivity at step {it}: operator is not an M-matrix")
        x = y / np.max(y)
        Ax = A @ x
        lam = float(np.dot(w * x, Ax) / np.dot(w * x, x))
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            if np.max(np.abs(Ax - lam * x)) <= max(residual_tol * lam, floor):
                break
        lam_old = lam
    else:
        raise EigenError(f"inverse iteration did not converge in {max_iter} steps (lambda ~ {lam!r})")
    if lam <= 0:
        raise EigenError("nonpositive eigenvalue estimate")
    residual = float(np.max(np.abs(A @ x - lam * x)))
    phi = np.zeros(op.grid.size)
    phi[idx] = x
    return EigenResult(lam, DiscreteField(op.grid, phi, op.dim), residual, it)


def extrema_stats(phi1: DiscreteField):
    """``(max phi1^2, max |grad phi1|^2)`` over all nodes, boundary included."""
    phi_sq = float(np.max(phi1.values) ** 2)
    grad_sq = float(np.max(discrete_gradient_sq(phi1).values))
    return phi_sq, grad_sq


def richardson_eigenvalue(make_grid, n, N=None, tol=1e-13):
    """Eigenvalue extrapolated from grids with n and 2n - 1 nodes per axis.

    ``make_grid(n)`` builds a grid; the scheme is second order so the
    combination (4 lam_fine - lam_coarse) / 3 cancels the h^2 term.
    """
    coarse = first_eigenpair(build_laplacian(make_grid(n), N), tol=tol).lambda1
    fine = first_eigenpair(build_laplacian(make_grid(2 * n - 1), N), tol=tol).lambda1
    return (4.0 * fine - coarse) / 3.0, coarse, fine
