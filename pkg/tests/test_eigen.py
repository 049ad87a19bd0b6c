import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selpde.discretization import IntervalGrid, RadialGrid, RectGrid, build_laplacian, build_radial_laplacian
from selpde.eigen import extrema_stats, first_eigenpair, richardson_eigenvalue


def ball_phi(r):
    r = np.asarray(r, dtype=float)
    return np.sinc(r)  # sin(pi r) / (pi r)


def ball_dphi_sq(r):
    r = np.asarray(r, dtype=float)
    return (np.cos(np.pi * r) / r - np.sin(np.pi * r) / (np.pi * r**2)) ** 2


def test_interval_matches_discrete_formula():
    n = 101
    h = 1.0 / (n - 1)
    res = first_eigenpair(build_laplacian(IntervalGrid(0, 1, n)))
    exact = 2.0 / h**2 * (1.0 - np.cos(np.pi * h))
    assert res.lambda1 == pytest.approx(exact, rel=1e-12)
    x = np.linspace(0, 1, n)
    np.testing.assert_allclose(res.phi1.values, np.sin(np.pi * x), atol=1e-10)


def test_eigenvector_positive_normalized():
    res = first_eigenpair(build_radial_laplacian(RadialGrid(1.0, 129), 3))
    v = res.phi1.values
    assert np.max(v) == pytest.approx(1.0, abs=1e-15)
    assert np.all(v[:-1] > 0) and v[-1] == 0
    assert res.residual <= 1e-9 * res.lambda1


def test_ball_three_dims_converges_to_pi_squared():
    errs = []
    for n in (65, 129, 257):
        lam = first_eigenpair(build_radial_laplacian(RadialGrid(1.0, n), 3)).lambda1
        errs.append(abs(lam - np.pi**2))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.1)
    assert errs[-1] / np.pi**2 < 1e-4


def test_ball_eigenfunction_shape():
    g = RadialGrid(1.0, 513)
    res = first_eigenpair(build_radial_laplacian(g, 3))
    assert np.max(np.abs(res.phi1.values - ball_phi(np.asarray(g.nodes)))) < 1e-4


def test_extrema_on_ball_against_dense_oracle():
    res = first_eigenpair(build_radial_laplacian(RadialGrid(1.0, 1025), 3))
    phi_sq, grad_sq = extrema_stats(res.phi1)
    dense = np.linspace(1e-4, 1, 200001)
    oracle = float(np.max(ball_dphi_sq(dense)))
    assert phi_sq == pytest.approx(1.0, abs=1e-12)
    assert grad_sq == pytest.approx(oracle, rel=1e-3)
    # the maximum sits inside the ball, not on the boundary where |phi'| = 1
    assert oracle > 1.8 and ball_dphi_sq(1.0) == pytest.approx(1.0)


def test_square_richardson():
    lam, coarse, fine = richardson_eigenvalue(lambda n: RectGrid(((0, 1), (0, 1)), (n, n)), 33, 2)
    exact = 2 * np.pi**2
    assert abs(lam - exact) < abs(fine - exact) / 10
    assert lam == pytest.approx(exact, rel=1e-5)


def test_disk_two_dims_bessel_zero():
    j01 = 2.404825557695773
    lam = first_eigenpair(build_radial_laplacian(RadialGrid(1.0, 513), 2)).lambda1
    assert lam == pytest.approx(j01**2, rel=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 4.0), st.integers(1, 6))
def test_scaling_with_radius(R, N):
    base = first_eigenpair(build_radial_laplacian(RadialGrid(1.0, 65), N)).lambda1
    lam = first_eigenpair(build_radial_laplacian(RadialGrid(R, 65), N)).lambda1
    assert lam * R**2 == pytest.approx(base, rel=1e-9)
