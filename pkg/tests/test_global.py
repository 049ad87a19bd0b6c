import numpy as np
import pytest
from scipy.integrate import quad

from conftest import DECAY_N5, problem_from
from selpde.global_solver import (
    BarrierError,
    RadialBarrier,
    barrier_bound_K,
    barrier_w,
    barrier_w_nested,
    decay_fit,
    default_schedule,
    epsilon_continuation,
    exhaust,
    fit_loglog,
    fit_offset_power,
)


def poly(r):
    return (1.0 + r) ** -4


def bump(r):
    return (1.0 - r * r) ** 2 if r < 1 else 0.0


def w_exp_n3(r):
    # closed form for phi = e^-r, N = 3
    r = np.asarray(r, dtype=float)
    return (r + 1) * np.exp(-r) + (2 - np.exp(-r) * (r**2 + 2 * r + 2)) / r


# ---- barrier


def test_K_for_polynomial_envelope():
    assert barrier_bound_K(poly, 5) == pytest.approx(1 / 18, rel=1e-12)


def test_K_for_exponential_envelope():
    assert barrier_bound_K(lambda r: np.exp(-r), 3) == pytest.approx(1.0, rel=1e-12)


def test_w_at_origin_equals_K():
    b = RadialBarrier(poly, 5)
    assert b.w(0.0) == pytest.approx(b.K, abs=1e-15)


def test_w_exponential_analytic():
    r = np.geomspace(1e-2, 60, 40)
    np.testing.assert_allclose(barrier_w(lambda x: np.exp(-x), 3, r), w_exp_n3(r), rtol=1e-10)


@pytest.mark.parametrize("phi,N,points", [(poly, 5, ()), (lambda r: np.exp(-r), 3, ()), (bump, 4, (1.0,))])
def test_nested_matches_closed(phi, N, points):
    r = np.geomspace(1e-3, 1e3, 30)
    a = barrier_w(phi, N, r, points=points)
    b = barrier_w_nested(phi, N, r, points=points)
    np.testing.assert_allclose(b, a, rtol=1e-9)


def test_bump_tail_is_fundamental_solution():
    F = quad(lambda s: s**3 * bump(s), 0, 1, epsabs=0, epsrel=1e-13)[0]
    r = np.array([2.0, 10.0, 100.0])
    np.testing.assert_allclose(barrier_w(bump, 4, r, points=(1.0,)), r**-2 * F / 2, rtol=1e-12)


def test_w_solves_radial_poisson():
    # -(w'' + (N-1) w'/r) = phi, checked by central differences
    N, h = 5, 1e-3
    r = np.array([0.5, 1.0, 3.0, 10.0])
    w = lambda x: barrier_w(poly, N, x)
    wpp = (w(r + h) - 2 * w(r) + w(r - h)) / h**2
    wp = (w(r + h) - w(r - h)) / (2 * h)
    np.testing.assert_allclose(-(wpp + (N - 1) * wp / r), poly(r), rtol=1e-5)


def test_w_is_decreasing_and_bounded():
    b = RadialBarrier(poly, 5)
    r = np.geomspace(1e-3, 1e4, 50)
    w = b.w(r)
    assert np.all(np.diff(w) < 0)
    assert b.check_bound(r)


def test_scalar_in_scalar_out_and_unsorted_input():
    r = np.array([3.0, 0.5, 3.0, 1.0])
    vals = barrier_w(poly, 5, r)
    assert vals.shape == (4,) and vals[0] == vals[2]
    assert isinstance(barrier_w(poly, 5, 2.0), float)


def test_barrier_rejects_low_dimension_and_divergence():
    with pytest.raises(BarrierError):
        barrier_bound_K(poly, 2)
    with pytest.raises(BarrierError):
        barrier_bound_K(lambda r: 1.0 / (1 + r) ** 2, 3)


def test_barrier_from_problem():
    b = RadialBarrier.from_problem(problem_from(DECAY_N5))
    # int_0^inf r (1+r^2)^-2 dr = 1/2; K = 1/(2*3)
    assert b.K == pytest.approx(1 / 6, rel=1e-10)


# ---- continuation


def test_default_schedule():
    s = default_schedule()
    assert len(s) == 20 and s[0] == 0.5 and s[-1] == 2.0**-20
    assert default_schedule(20, floor=1e-3) == [2.0**-n for n in range(1, 10)]
    assert default_schedule(5, start=0.2) == [0.125, 0.0625, 0.03125]


def test_continuation_reaches_manufactured(manufactured_disc_257):
    u, tr = epsilon_continuation(manufactured_disc_257)
    assert tr.verdict in ("converged", "floor-reached")
    r = np.asarray(u.grid.nodes)
    assert np.max(np.abs(u.values - (1 - r**2))) < 1e-5
    assert tr.limit_bracket_ok and tr.bracket_slack <= 1e-12
    d = np.array(tr.supdiffs)
    k = int(np.argmax(d))
    assert np.all(np.diff(d[k:]) <= 1e-15)


def test_continuation_rejects_bad_schedule(manufactured_disc_257):
    with pytest.raises(ValueError):
        epsilon_continuation(manufactured_disc_257, schedule=[0.1, 0.2])
    with pytest.raises(ValueError):
        epsilon_continuation(manufactured_disc_257, schedule=[0.1, 0.0])


def test_continuation_csv(manufactured_disc_257):
    _, tr = epsilon_continuation(manufactured_disc_257, schedule=default_schedule(6))
    rows = tr.csv_rows().splitlines()
    assert rows[0].startswith("step,epsilon") and len(rows) == 7


# ---- exhaustion


@pytest.fixture(scope="module")
def decay_run():
    return exhaust(problem_from(DECAY_N5))


def test_exhaustion_stays_below_barrier(decay_run):
    assert all(b.barrier_violations == 0 for b in decay_run.balls)
    assert decay_run.barrier_margin > 0


def test_exhaustion_sup_differences_contract(decay_run):
    d = decay_run.supdiffs
    assert len(d) == 4 and all(b < a for a, b in zip(d, d[1:]))
    assert decay_run.verdict in ("converged", "contracting")


def test_exhaustion_solutions_increase_with_radius(decay_run):
    # zero data on a larger sphere lies below u_{k+1}: maximum principle
    for prev, nxt in zip(decay_run.balls, decay_run.balls[1:]):
        r = np.asarray(prev.u.grid.nodes)
        assert np.all(np.interp(r, nxt.u.grid.nodes, nxt.u.values) >= prev.u.values - 1e-8)


def test_global_solution_evaluation(decay_run):
    R = decay_run.radii[-1]
    assert decay_run(2 * R) == 0.0
    assert decay_run(0.0) == pytest.approx(decay_run.final.values[0])


def test_decay_fit(decay_run):
    fit = decay_fit(decay_run, 4.0)
    assert abs(fit.slope + 2) <= 0.15
    assert abs(fit.barrier_slope + 2) <= 0.02
    assert fit.predicted == -2.0 and "slope=" in fit.to_text()


def test_cold_start_gives_same_verdicts(decay_run):
    cold = exhaust(problem_from(DECAY_N5), k_max=2, warm_start=False)
    warm = exhaust(problem_from(DECAY_N5), k_max=2)
    assert [b.trace.verdict for b in cold.balls] == [b.trace.verdict for b in warm.balls]
    np.testing.assert_allclose(cold.final.values, warm.final.values, atol=1e-6)


def test_small_a_scales_solution():
    text = "dim = 5\ndomain = wholespace\na = 1e-3*(1 + r^2)^(-2)\nc = 0\n"
    sol = exhaust(problem_from(text), k_max=1)
    base = exhaust(problem_from(text.replace("1e-3*", "")), k_max=1)
    # c = 0 makes the problem linear
    np.testing.assert_allclose(sol.final.values, 1e-3 * base.final.values, atol=1e-9)


def test_exhaust_rejects_bounded_domain(manufactured):
    with pytest.raises(ValueError):
        exhaust(manufactured)


def test_vanishing_a_is_rejected():
    from selpde.barriers import BracketError

    p = problem_from("dim = 3\ndomain = wholespace\na = max(1 - r^2, 0)^2\nc = 1\n")
    with pytest.raises(BracketError):
        exhaust(p, k_max=0)


# ---- fits


def test_fit_loglog_exact_power():
    r = np.geomspace(1, 100, 20)
    s, c, res = fit_loglog(r, 3 * r**-2.5)
    assert s == pytest.approx(-2.5) and c == pytest.approx(np.log(3)) and res < 1e-12


def test_offset_fit_recovers_exponent():
    r = np.linspace(5, 25, 40)
    y = 2.0 * (r**-1.7 - 30.0**-1.7)
    s, c, res = fit_offset_power(r, y, 30.0)
    assert s == pytest.approx(-1.7, abs=1e-6)
    assert fit_loglog(r, y)[0] < -1.9  # the plain slope is biased


def test_fit_refuses_tiny_values():
    with pytest.raises(ValueError):
        fit_loglog(np.arange(1, 7.0), np.array([1, 1, 1, 1e-20, 1, 1.0]))
    with pytest.raises(ValueError):
        fit_loglog(np.arange(1, 4.0), np.ones(3))
