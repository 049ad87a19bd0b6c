"""Adaptive quadrature on finite intervals and on [r, inf).

Semi-infinite integrals are mapped onto a bounded interval with
t = 1/(1 + xi), so the adaptive rule always works on (0, 1/(1+r)].
"""

from __future__ import annotations

import math
import warnings

from scipy import integrate

__all__ = ["QuadratureError", "integrate_finite", "integrate_tail", "integrate_halfline"]


class QuadratureError(RuntimeError):
    """Raised when an adaptive rule cannot reach the requested accuracy.

    ``value`` and ``abserr`` carry the partial result so callers can report
    bounds instead of nothing.
    """

    def __init__(self, message, value=float("nan"), abserr=float("inf")):
        super().__init__(f"{message} (partial value {value!r}, error estimate {abserr!r})")
        self.value = value
        self.abserr = abserr


def _quad(f, a, b, rtol, atol, points, limit):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(
                f, a, b, epsabs=atol, epsrel=rtol, limit=limit, points=points
            )
        except integrate.IntegrationWarning as exc:
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, abserr = integrate.quad(
                f, a, b, epsabs=atol, epsrel=rtol, limit=limit, points=points
            )
            # QUADPACK flags round-off saturation even when the estimate is
            # already far below the request; only fail on a real miss.
            if not math.isfinite(value) or abserr > max(atol, 100 * rtol * abs(value)):
                raise QuadratureError(str(exc).splitlines()[0], value, abserr) from None
    if not math.isfinite(value):
        raise QuadratureError("non-finite integral", value, abserr)
    return value, abserr


def integrate_finite(f, a, b, *, rtol=1e-12, atol=0.0, points=None, limit=200):
    """Integral of ``f`` over [a, b]; returns ``(value, abserr)``."""
    if b <= a:
        return 0.0, 0.0
    inner = None
    if points:
        inner = sorted(p for p in points if a < p < b) or None
    return _quad(f, a, b, rtol, atol, inner, limit)


def integrate_tail(f, r, *, rtol=1e-12, atol=0.0, points=None, limit=200):
    """Integral of ``f`` over [r, inf) via the substitution t = 1/(1 + xi).

    ``points`` are break points in the original variable (e.g. the edge of a
    compact support); they are mapped into t.
    """
    if r < 0:
        raise ValueError("lower limit must be nonnegative")
    t_hi = 1.0 / (1.0 + r)

    def g(t):
        if t <= 0.0:
            return 0.0
        xi = 1.0 / t - 1.0
        return f(xi) / (t * t)

    mapped = None
    if points:
        mapped = [1.0 / (1.0 + p) for p in points if p > r]
    return integrate_finite(g, 0.0, t_hi, rtol=rtol, atol=atol, points=mapped, limit=limit)


def integrate_halfline(f, *, rtol=1e-12, atol=0.0, points=None, limit=200):
    """Integral of ``f`` over [0, inf)."""
    return integrate_tail(f, 0.0, rtol=rtol, atol=atol, points=points, limit=limit)
