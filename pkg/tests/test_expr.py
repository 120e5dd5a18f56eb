import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speclab.expr import (ExprSyntaxError, UnknownIdentifier, eval_grad, parse_field)


@pytest.mark.parametrize("src, point, expected", [
    ("1+2*3", (0.3, -2.0), 7.0),
    ("4*exp(-(x^2+y^2))", (0.0, 0.0), 4.0),
    ("2^3^2", (0.0, 0.0), 512.0),
    ("-x^2", (3.0, 0.0), -9.0),
    ("min(x, y) + max(x, y)", (1.0, 2.0), 3.0),
    ("abs(x) + sqrt(4) + log(1) + cos(0) + sin(0)", (-1.5, 0.0), 4.5),
])
def test_values(src, point, expected):
    assert parse_field(src)(*point) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("src, point, grad", [
    ("x^2", (1.0, 0.0), (2.0, 0.0)),
    ("x*y", (2.0, 3.0), (3.0, 2.0)),
    ("sin(x)", (0.0, 0.0), (1.0, 0.0)),
    ("5", (0.4, 0.1), (0.0, 0.0)),
])
def test_gradients(src, point, grad):
    np.testing.assert_allclose(eval_grad(parse_field(src), point), grad, atol=1e-6)


def test_vectorized_and_constant_broadcast():
    x = np.linspace(-1, 1, 7)
    assert parse_field("3")(x, x).shape == (7,)
    np.testing.assert_allclose(parse_field("x*y")(x, x), x * x)


@pytest.mark.parametrize("bad", ["", "1+", "(x", "x y", "foo(x)", "z + 1", "2 ** 3"])
def test_rejects_malformed(bad):
    with pytest.raises((ExprSyntaxError, UnknownIdentifier)):
        parse_field(bad)


leaf = st.one_of(st.sampled_from(["x", "y"]),
                 st.integers(0, 9).map(str),
                 st.floats(0.1, 5, allow_nan=False).map(lambda v: f"{v:.3f}"))


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})")
    call = st.tuples(st.sampled_from(["sin", "cos", "abs", "-"]), children).map(
        lambda t: f"{t[0]}({t[1]})")
    power = children.map(lambda c: f"{c}^2")
    return st.one_of(binop, call, power)


expressions = st.recursive(leaf, _combine, max_leaves=12)


@given(expressions)
def test_pretty_print_round_trip(src):
    f = parse_field(src)
    g = parse_field(f.pretty())
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2, 2, size=(100, 2))
    with np.errstate(over="ignore", invalid="ignore"):
        np.testing.assert_array_equal(f(pts[:, 0], pts[:, 1]), g(pts[:, 0], pts[:, 1]))
