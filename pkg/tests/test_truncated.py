import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_manufactured, problem_from
from selpde.assembly import discretize, make_grid
from selpde.barriers import build_bracket
from selpde.discretization import DiscreteField
from selpde.truncated import (
    SingularityError,
    TruncatedSolveOptions,
    jacobian,
    residual,
    solve_truncated,
    verify_uniqueness,
)


def test_residual_of_exact_solution_at_zero_eps(manufactured_disc_257):
    d = manufactured_disc_257
    r = np.asarray(d.grid.nodes)
    u = d.field(exact_manufactured(r))
    res = residual(d, u, 0.0)
    assert np.max(np.abs(res.values[d.interior][1:])) < 1e-9
    assert res.values[-1] == 0.0


def test_residual_shift_term(manufactured_disc_257):
    # with eps > 0 the only change is c |u'|^2 (1/(u+eps) - 1/u)
    d = manufactured_disc_257
    r = np.asarray(d.grid.nodes)
    u = d.field(exact_manufactured(r))
    eps = 0.2
    diff = residual(d, u, eps).values - residual(d, u, 0.0).values
    gsq = d.grad_sq(u.values)
    inside = d.interior
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = d.c * gsq * (1 / (u.values + eps) - 1 / u.values)
    np.testing.assert_allclose(diff[inside], expected[inside], atol=1e-10)


def test_singularity_is_reported(manufactured_disc_257):
    d = manufactured_disc_257
    u = d.field(np.full(d.grid.size, -1.0))
    with pytest.raises(SingularityError) as err:
        residual(d, u, 0.5)
    assert err.value.value == pytest.approx(-0.5)


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(manufactured_disc_257, seed):
    d = manufactured_disc_257
    rng = np.random.default_rng(seed)
    r = np.asarray(d.grid.nodes)
    u = exact_manufactured(r) + 0.05 * np.sin(3 * r)
    v = rng.standard_normal(d.grid.size)
    J = jacobian(d, d.field(u), 0.1)
    F = lambda x: residual(d, d.field(x), 0.1).values
    errs = []
    for tau in (1e-3, 5e-4, 2.5e-4):
        errs.append(np.max(np.abs((F(u + tau * v) - F(u)) / tau - J @ v)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 2) < 0.2)


def test_manufactured_solve_second_order(manufactured):
    errs = []
    for n in (65, 129, 257):
        d = discretize(manufactured, make_grid(manufactured, n))
        br = build_bracket(d, epsilon=0.1)
        u, rep = solve_truncated(d, epsilon=0.0, bracket=br)
        assert rep.converged
        errs.append(np.max(np.abs(u.values - exact_manufactured(d.grid.nodes))))
    # the scheme is exact on this quadratic: errors are round-off
    assert max(errs) < 1e-9


def test_solution_stays_in_bracket(manufactured_disc_257, manufactured_bracket_257):
    br = manufactured_bracket_257
    u, rep = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=br)
    assert rep.converged
    assert np.all(br.lower - 1e-12 <= u.values) and np.all(u.values <= br.upper + 1e-12)
    assert u.values[-1] == 0.0


def test_grgr_is_unicl_shifted(manufactured_disc_257, manufactured_bracket_257):
    br = manufactured_bracket_257
    u, _ = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=br)
    U, rep = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=br, form="grgr")
    assert rep.converged
    np.testing.assert_allclose(U.values, u.values + 0.1, atol=1e-11)


def test_zero_gradient_coefficient_is_linear_problem():
    p = problem_from("dim = 3\ndomain = ball 1\na = 6\nc = 0\n")
    d = discretize(p, make_grid(p, 129))
    u, rep = solve_truncated(d, epsilon=0.3, bracket=build_bracket(d, epsilon=0.3))
    assert rep.converged and rep.iterations <= 2
    np.testing.assert_allclose(u.values, exact_manufactured(d.grid.nodes), atol=1e-11)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.25, 4.0))
def test_scaling_of_a(t):
    # u solves with a  <=>  t u solves with t a (for eps = 0)
    base = problem_from("dim = 3\ndomain = ball 1\na = 6 + 4*r^2\nc = 1 - r^2\n")
    scaled = problem_from(f"dim = 3\ndomain = ball 1\na = {t!r}*(6 + 4*r^2)\nc = 1 - r^2\n")
    outs = []
    for p in (base, scaled):
        d = discretize(p, make_grid(p, 65))
        u, rep = solve_truncated(d, epsilon=0.0, bracket=build_bracket(d, epsilon=0.1))
        assert rep.converged
        outs.append(u.values)
    np.testing.assert_allclose(outs[1], t * outs[0], atol=1e-9 * max(t, 1))


def test_monotone_in_eps(manufactured_disc_257, manufactured_bracket_257):
    br = manufactured_bracket_257
    big, _ = solve_truncated(manufactured_disc_257, epsilon=0.2, bracket=br.shifted(0.2))
    small, _ = solve_truncated(manufactured_disc_257, epsilon=0.05, bracket=br.shifted(0.05))
    # larger eps weakens the gradient penalty, so u grows
    assert np.all(big.values >= small.values - 1e-12)


def test_uniqueness_three_starts(manufactured_disc_257, manufactured_bracket_257):
    rep = verify_uniqueness(manufactured_disc_257, epsilon=0.1, bracket=manufactured_bracket_257)
    assert rep.verdict == "unique"
    assert rep.max_distance <= 1e-8
    assert max(rep.alpha_max.values()) <= 1e-8


def test_picard_fallback_converges(manufactured_disc_257, manufactured_bracket_257):
    opts = TruncatedSolveOptions(max_newton=0)
    u, rep = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=manufactured_bracket_257, opts=opts)
    assert rep.strategy == "picard" and rep.converged
    ref, _ = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=manufactured_bracket_257)
    assert np.max(np.abs(u.values - ref.values)) < 1e-8


def test_zero_eps_needs_positive_lower_bound(manufactured_disc_257):
    p = problem_from("dim = 3\ndomain = ball 1\na = 6\nc = 0\n")
    d = discretize(p, make_grid(p, 33))
    br = build_bracket(d, epsilon=0.0)
    br = type(br)(br.sub.with_values(np.zeros(d.grid.size)), br.super, br.sigma1, 0.0, br.m2, br.M1)
    with pytest.raises(ValueError):
        solve_truncated(d, epsilon=0.0, bracket=br)


def test_square_solution_mirror_symmetric():
    p = problem_from("dim = 2\ndomain = rect -1..1 -1..1\na = 2 + x2^2\nc = 0.5\n")
    d = discretize(p, make_grid(p, 33))
    u, rep = solve_truncated(d, epsilon=0.1, bracket=build_bracket(d, epsilon=0.1))
    assert rep.converged
    U = u.values.reshape(d.grid.shape)
    np.testing.assert_allclose(U, U[::-1, :], atol=1e-10)
    np.testing.assert_allclose(U, U[:, ::-1], atol=1e-10)


def test_newton_csv(manufactured_disc_257, manufactured_bracket_257):
    _, rep = solve_truncated(manufactured_disc_257, epsilon=0.1, bracket=manufactured_bracket_257)
    rows = rep.csv_rows().splitlines()
    assert rows[0] == "step,residual_inf,repairs" and len(rows) == len(rep.residual_history) + 1


def test_picard_gives_up_when_stagnating():
    # coarse grid, c > 1/2 at the boundary: the bracket blocks the discrete root
    p = problem_from("dim = 1\ndomain = rect -1..1\na = 2 + x1\nc = 1\n")
    d = discretize(p, make_grid(p, 129))
    br = build_bracket(d, epsilon=0.5).shifted(2.0**-20)
    _, rep = solve_truncated(d, epsilon=2.0**-20, bracket=br, start=br.lower)
    assert rep.iterations < 2000
    if not rep.converged:
        assert "stopped with residual" in rep.message
