import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selpde.expr import ExpressionError, evaluate, parse_expression, symbols_of, to_source


def ev(text, **env):
    return float(evaluate(parse_expression(text), env))


def test_polynomial_at_one():
    assert ev("6 + 4*r^2", r=1.0) == 10.0


def test_negative_power_identity():
    assert ev("(1+r)^(-4)", r=0.0) == 1.0


def test_min_exp_against_mpmath():
    import mpmath

    mpmath.mp.dps = 30
    oracle = float(min(mpmath.mpf(1), mpmath.exp(-2)))
    assert ev("min(1, exp(-r))", r=2.0) == pytest.approx(oracle, rel=1e-15)


def test_power_is_right_associative():
    assert ev("2^3^2") == 512.0


def test_unary_minus_binds_to_base():
    assert ev("-2^2") == 4.0
    assert ev("-(2^2)") == -4.0


def test_constants_and_functions():
    assert ev("pi") == math.pi
    assert ev("e") == math.e
    assert ev("pow(2, 10)") == 1024.0
    assert ev("max(1, 5, 3)") == 5.0
    assert ev("sqrt(abs(-9)) + ln(e) + cos(0) + sin(0)") == 5.0


def test_cartesian_symbols():
    node = parse_expression("2 + x1/(1+r^2)", dim=2)
    assert symbols_of(node) == {"x1", "r"}
    assert float(evaluate(node, {"x1": 1.0, "r": 1.0})) == 2.5


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1 + ", "unexpected"),
        ("foo(1)", "unknown function"),
        ("q + 1", "unknown symbol"),
        ("pow(1)", "argument"),
        ("exp(1, 2)", "argument"),
        ("(1 + 2", ")"),
        ("1 $ 2", "unexpected"),
    ],
)
def test_errors(text, fragment):
    with pytest.raises(ExpressionError) as info:
        parse_expression(text)
    assert fragment in str(info.value)


def test_error_carries_position():
    with pytest.raises(ExpressionError) as info:
        parse_expression("6 + * r")
    assert info.value.position == 4


def test_coordinate_beyond_dimension_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("x3 + 1", dim=2)


def test_vectorized_evaluation():
    r = np.linspace(0, 2, 7)
    out = evaluate(parse_expression("6 + 4*r^2"), {"r": r})
    np.testing.assert_allclose(out, 6 + 4 * r**2, rtol=0, atol=0)


# ---- round trip: parse -> print -> parse evaluates identically

_leaf = st.one_of(
    st.sampled_from(["r", "x1", "x2", "pi", "e"]),
    st.integers(0, 9).map(str),
    st.floats(0.1, 9.9, allow_nan=False).map(lambda v: f"{v:.3f}"),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(children, st.sampled_from(["exp", "sin", "cos", "abs"])).map(lambda t: f"{t[1]}({t[0]})"),
        st.tuples(children, children).map(lambda t: f"min({t[0]}, {t[1]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"{t[0]}^{t[1]}"),
    )


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@settings(max_examples=60, deadline=None)
@given(expressions)
def test_round_trip_property(text):
    node = parse_expression(text, dim=2)
    again = parse_expression(to_source(node), dim=2)
    rng = np.random.default_rng(0)
    env = {"x1": rng.uniform(-2, 2, 100), "x2": rng.uniform(-2, 2, 100)}
    env["r"] = np.hypot(env["x1"], env["x2"])
    with np.errstate(all="ignore"):
        a = np.asarray(evaluate(node, env), dtype=float)
        b = np.asarray(evaluate(again, env), dtype=float)
    np.testing.assert_array_equal(np.broadcast_to(a, b.shape), b)


def test_evaluation_is_deterministic():
    node = parse_expression("exp(-r) * sin(3*r) / (1 + r^2)")
    r = np.linspace(0, 10, 1001)
    first = evaluate(node, {"r": r})
    for _ in range(3):
        assert np.array_equal(evaluate(node, {"r": r}), first)
