"""Ordered sub/super solution pairs for the truncated problem.

With phi1 the first Dirichlet eigenfunction (max 1) and v the solution of
-Laplace(v) = a, v = 0 on the boundary:

    sub   = sigma1 * phi1^2 + eps      (eigen mode)
    sub   = sigma1 * v^2 + eps         (poisson mode)
    super = v + eps

where sigma1 is the largest admissible constant given m2 = min a and
M1 = max c. Both extrema come from nodal samples, so m2 is deflated and M1
inflated slightly before use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import DiscreteProblem, discretize
from .discretization import DiscreteField, discrete_gradient_sq, solve_linear
from .eigen import extrema_stats, first_eigenpair

__all__ = [
    "BracketError",
    "BracketPair",
    "SubsolutionReport",
    "poisson_supersolution",
    "compute_sigma1",
    "compute_sigma1_alt",
    "build_bracket",
    "verify_subsolution_residual",
]

M2_DEFLATE = 0.99
M1_INFLATE = 1.01


class BracketError(ValueError):
    """The discrete sub/super pair is not ordered, or its inputs are degenerate."""


@dataclass(frozen=True, eq=False)
class BracketPair:
    sub: DiscreteField
    super: DiscreteField
    sigma1: float
    epsilon: float
    m2: float
    M1: float
    mode: str = "eigen"
    lambda1: float | None = None
    phi1: DiscreteField | None = field(default=None, repr=False)
    v: DiscreteField | None = field(default=None, repr=False)
    sigma1_alt: float | None = None

    @property
    def lower(self):
        """Lower bound in the zero-boundary form (sub - eps)."""
        return self.sub.values - self.epsilon

    @property
    def upper(self):
        return self.super.values - self.epsilon

    def shifted(self, epsilon):
        """Same construction for another eps (only the additive shift changes)."""
        d = epsilon - self.epsilon
        return BracketPair(
            self.sub + d, self.super + d, self.sigma1, epsilon, self.m2, self.M1,
            self.mode, self.lambda1, self.phi1, self.v, self.sigma1_alt,
        )

    def manifest(self):
        lines = [
            f"mode={self.mode}",
            f"sigma1={self.sigma1!r}",
            f"epsilon={self.epsilon!r}",
            f"m2={self.m2!r}",
            f"M1={self.M1!r}",
        ]
        if self.lambda1 is not None:
            lines.append(f"lambda1={self.lambda1!r}")
        if self.sigma1_alt is not None:
            lines.append(f"sigma1_alt={self.sigma1_alt!r}")
        return "\n".join(lines) + "\n"


def _as_disc(problem, grid):
    if isinstance(problem, DiscreteProblem):
        return problem
    return discretize(problem, grid)


def poisson_supersolution(problem, grid=None) -> DiscreteField:
    """v with -Laplace_h v = a inside and v = 0 on the boundary."""
    disc = _as_disc(problem, grid)
    v = solve_linear(disc.op, disc.a, 0.0)
    return disc.field(v.values)


def compute_sigma1(m2, lambda1, max_phi1_sq, M1, max_grad_phi1_sq):
    """min{ m2 / (2 lambda1 max phi1^2 + 4 M1 max |grad phi1|^2), 1 }.

    ``M1 = 0`` (no gradient term) is accepted; every other input must be
    positive.
    """
    for name, val in (("m2", m2), ("lambda1", lambda1), ("max_phi1_sq", max_phi1_sq), ("max_grad_phi1_sq", max_grad_phi1_sq)):
        if not val > 0:
            raise BracketError(f"{name} must be positive, got {val!r}")
    if not M1 >= 0:
        raise BracketError(f"M1 must be nonnegative, got {M1!r}")
    return min(m2 / (2.0 * lambda1 * max_phi1_sq + 4.0 * M1 * max_grad_phi1_sq), 1.0)


def compute_sigma1_alt(m2, v: DiscreteField, M1):
    """min{ m2 / max(2 v + 4 M1 |grad v|^2), 1 } for the sub solution sigma1 v^2 + eps."""
    if not m2 > 0:
        raise BracketError(f"m2 must be positive, got {m2!r}")
    if not M1 >= 0:
        raise BracketError(f"M1 must be nonnegative, got {M1!r}")
    denom = float(np.max(2.0 * v.values + 4.0 * M1 * discrete_gradient_sq(v).values))
    if not denom > 0:
        raise BracketError("degenerate Poisson solution: max(2v + 4 M1 |grad v|^2) is not positive")
    return min(m2 / denom, 1.0)


def build_bracket(problem, grid=None, epsilon=0.1, mode="eigen", *, eigen_tol=1e-12) -> BracketPair:
    """Build and check the ordered pair sub <= super on ``grid``.

    ``mode`` is ``"eigen"``, ``"poisson"`` or ``"combined"``; the combined
    lower bound is the nodal max of both subsolutions (a valid lower bound,
    not itself claimed to be a subsolution).
    """
    if mode not in ("eigen", "poisson", "combined"):
        raise ValueError(f"unknown bracket mode {mode!r}")
    if not epsilon >= 0:
        raise BracketError("epsilon must be nonnegative")
    disc = _as_disc(problem, grid)
    inside = disc.interior
    m2 = float(np.min(disc.a[inside])) * M2_DEFLATE
    M1 = float(np.max(disc.c[inside])) * M1_INFLATE
    if not m2 > 0:
        raise BracketError(f"min a = {m2 / M2_DEFLATE!r} is not positive")
    v = poisson_supersolution(disc)
    lambda1 = phi1 = None
    sigma1 = sigma_alt = None
    subs = []
    if mode in ("eigen", "combined"):
        eig = first_eigenpair(disc.op, tol=eigen_tol)
        lambda1, phi1 = eig.lambda1, eig.phi1
        phi_sq, grad_sq = extrema_stats(phi1)
        sigma1 = compute_sigma1(m2, lambda1, phi_sq, M1, grad_sq)
        subs.append(sigma1 * phi1.values**2)
    if mode in ("poisson", "combined"):
        sigma_alt = compute_sigma1_alt(m2, v, M1)
        subs.append(sigma_alt * v.values**2)
        if mode == "poisson":
            sigma1, sigma_alt = sigma_alt, None
    lower = subs[0] if len(subs) == 1 else np.maximum(*subs)
    sub = disc.field(lower + epsilon)
    sup = disc.field(v.values + epsilon)
    bad = sub.values > sup.values
    if np.any(bad):
        i = int(np.argmax(sub.values - sup.values))
        raise BracketError(
            f"bracket ordering violated at {int(bad.sum())} node(s); worst node {i} "
            f"(sub - super = {sub.values[i] - sup.values[i]:.3e}): grid too coarse?"
        )
    return BracketPair(sub, sup, sigma1, epsilon, m2, M1, mode, lambda1, phi1, v, sigma_alt)


@dataclass(frozen=True)
class SubsolutionReport:
    sub_max_residual: float
    super_min_residual: float
    h: float
    n_interior: int

    def holds(self, slack):
        return self.sub_max_residual <= slack and self.super_min_residual >= -slack


def verify_subsolution_residual(problem, bracket: BracketPair, grid=None) -> SubsolutionReport:
    """Discrete residuals -Laplace_h w + c |grad w|^2 / w - a of sub and super.

    Evaluated at interior nodes in the boundary-value-eps form; a sub
    solution gives residual <= 0 and a super solution >= 0, up to
    discretization slack.
    """
    disc = _as_disc(problem, grid if grid is not None else bracket.sub.grid)
    inside = disc.interior

    def res(w):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = disc.op.apply(w) + disc.c * disc.grad_sq(w) / w - disc.a
        return out[inside]

    r_sub = res(bracket.sub.values)
    r_sup = res(bracket.super.values)
    return SubsolutionReport(float(np.max(r_sub)), float(np.min(r_sup)), disc.grid.h, int(inside.sum()))
