import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selpde.problem import (
    CoefficientField,
    DomainSpec,
    FieldEvaluationError,
    Problem,
    ProblemFileError,
    RadialTable,
    Sampling,
    check_assumptions,
    eval_field,
    load_problem,
    parse_problem_text,
    phi_envelope,
)


def wholespace(a, dim, c="1"):
    return Problem(dim, CoefficientField(a, dim=dim, name="a"), CoefficientField(c, dim=dim, name="c"), DomainSpec("wholespace"))


# ---- eval_field


def test_eval_examples():
    assert eval_field(CoefficientField("6+4*r^2"), 0.0) == 6.0
    assert eval_field(CoefficientField("1-r^2"), 1.0) == 0.0


def test_eval_reports_location_of_nonfinite():
    with pytest.raises(FieldEvaluationError) as info:
        eval_field(CoefficientField("ln(r)", name="a"), np.array([1.0, 0.0]))
    assert "r=0.0" in str(info.value)
    with pytest.raises(FieldEvaluationError):
        eval_field(CoefficientField("1/x1", dim=2), np.array([[0.0, 1.0]]), radial=False)


def test_nonradial_field_refuses_radius():
    with pytest.raises(ValueError):
        eval_field(CoefficientField("x1 + 1", dim=2), 1.0, radial=True)


def test_eval_on_coordinates_uses_norm():
    f = CoefficientField("r^2 + x2", dim=2)
    assert eval_field(f, np.array([[3.0, 4.0]]), radial=False)[0] == 29.0


def test_table_interpolation_monotone():
    t = RadialTable([0, 1, 2], [1.0, 0.5, 0.25])
    f = CoefficientField(table=t)
    v = eval_field(f, 0.5)
    assert 0.5 < v < 1.0
    dense = np.linspace(0, 2, 2001)
    vals = eval_field(f, dense)
    assert np.all(np.diff(vals) <= 0)
    np.testing.assert_allclose(eval_field(f, np.array([0.0, 1.0, 2.0])), [1.0, 0.5, 0.25], rtol=1e-15)


def test_table_linear_rule_and_tail():
    t = RadialTable([0, 1, 2], [1.0, 0.5, 0.25], rule="linear")
    assert t(0.5) == pytest.approx(0.75)
    # power-law continuation through the last two knots: 0.25 * (4/2)^-1
    assert t(4.0) == pytest.approx(0.125)


def test_table_rejects_unsorted_knots():
    with pytest.raises(ValueError):
        RadialTable([0, 2, 1], [1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 50))
def test_eval_deterministic(r):
    f = CoefficientField("exp(-r) * (1 + sin(r))")
    assert eval_field(f, r) == eval_field(f, r)


# ---- envelope


def test_envelope_radial_exact():
    p = wholespace("(1+r)^(-4)", 5)
    assert phi_envelope(p, 1.0) == 0.0625
    r = np.geomspace(1e-3, 1e3, 50)
    assert np.array_equal(phi_envelope(p, r), eval_field(p.a, r))


def test_envelope_constant():
    p = wholespace("3", 3)
    assert phi_envelope(p, 7.5) == 3.0


def test_envelope_sampled_nonradial():
    a = CoefficientField("2 + x1/(1+r^2)", dim=2, name="a")
    p = Problem(2, a, CoefficientField("1"), DomainSpec("ball", radius=2.0))
    # dense oracle on the circle
    theta = np.linspace(0, 2 * np.pi, 100001)
    exact = np.max(2 + np.cos(theta) / 2)
    v = phi_envelope(p, 1.0, samples=64)
    assert exact == pytest.approx(2.5)
    assert 2.4 <= v <= 2.5 * 1.05


# ---- assumptions


def test_check_poly_family():
    rep = check_assumptions(wholespace("(1+r)^(-4)", 5))
    assert rep.ac2_positive == "pass"
    assert rep.a3_verdict == "finite"
    assert rep.a3_integral == pytest.approx(1 / 6, rel=1e-8)
    assert rep.mu_estimate == pytest.approx(4.0, abs=0.01)
    assert rep.mu_verdict == "admissible"
    assert rep.passed


def test_check_constant_a_diverges():
    rep = check_assumptions(wholespace("1", 3))
    assert rep.a3_verdict == "divergent"
    assert not rep.passed


def test_check_exponential():
    rep = check_assumptions(wholespace("exp(-r)", 3))
    assert rep.a3_verdict == "finite"
    assert rep.a3_integral == pytest.approx(1.0, rel=1e-10)


def test_check_negative_coefficient():
    p = Problem(3, CoefficientField("1 - r", name="a"), CoefficientField("1", name="c"), DomainSpec("ball", radius=2.0))
    rep = check_assumptions(p)
    assert rep.ac2_positive == "fail"
    assert rep.ac2_worst_field == "a"
    assert not rep.passed


def test_check_bounded_skips_integral():
    p = Problem(3, CoefficientField("1"), CoefficientField("1"), DomainSpec("ball", radius=1.0))
    rep = check_assumptions(p, Sampling(n_radial=50))
    assert rep.a3_verdict == "n/a"
    assert rep.passed
    assert "not verified" in " ".join(rep.notes)


def test_report_text_and_dict():
    rep = check_assumptions(wholespace("(1+r)^(-4)", 5))
    assert "overall: pass" in rep.to_text()
    assert rep.to_dict()["passed"] is True


# ---- problem model and files


def test_wholespace_needs_dim_above_two():
    with pytest.raises(ValueError):
        wholespace("1", 2)


def test_parse_problem_file(tmp_path):
    (tmp_path / "a.tab").write_text("0 1\n1 0.5\n2 0.25\n")
    path = tmp_path / "p.txt"
    path.write_text("# comment\ndim = 2\ndomain = rect 0..1 -1..1\na_table = a.tab\nc = 1 + x1\nalpha = 0.5\n")
    p = load_problem(path)
    assert p.dim == 2 and p.domain.bounds == ((0.0, 1.0), (-1.0, 1.0))
    assert p.a.table is not None and not p.c.radial
    assert p.holder_alpha == 0.5


@pytest.mark.parametrize(
    "text, where",
    [
        ("dim = 3\ndomain = ball 1\na = 6 + * r\nc = 1\n", "3:9"),
        ("dim = 3\ndomain = ball 1\na = 1\nc = 1\nfoo = 2\n", "5:1"),
        ("dim = 3\ndomain = disk 1\na = 1\nc = 1\n", "2"),
        ("dim = 3\ndomain = ball 1\na = 1\n", "c"),
    ],
)
def test_problem_file_errors(text, where):
    with pytest.raises(ProblemFileError) as info:
        parse_problem_text(text)
    assert where in str(info.value)


def test_content_hash_tracks_source():
    p1 = parse_problem_text("dim = 3\ndomain = ball 1\na = 1\nc = 1\n")
    p2 = parse_problem_text("dim = 3\ndomain = ball 1\na = 2\nc = 1\n")
    assert p1.content_hash() != p2.content_hash()
    assert p1.content_hash() == parse_problem_text("dim = 3\ndomain = ball 1\na = 1\nc = 1\n").content_hash()
