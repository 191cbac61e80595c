import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinlayer import expr as ex

# (text, expected column) for malformed input; column is 1-based
INVALID = [
    ("1 +", 4),
    ("(1 + 2", 7),
    ("1 + 2)", 6),
    ("sin()", 5),
    ("sin(1, 2)", 1),
    ("foo(1)", 1),
    ("q * 2", 1),
    ("2x", 1),
    ("1 $ 2", 3),
    ("", 1),
    ("max(1)", 1),
    ("sin", 1),
    ("1 ** 2", 4),
    ("*3", 1),
    ("1..2", 1),
    ("min(1,)", 7),
    ("x1 + ", 6),
    ("3 4", 3),
    ("exp(1", 6),
    ("abs(1 2)", 7),
    ("y1^", 4),
]

# (text, bindings, expected value)
VALID = [
    ("2^3^2", {}, 512.0),
    ("-2^2", {}, -4.0),
    ("2^-1", {}, 0.5),
    ("max(x1, -x1) + min(1, e)", {"x1": -3.0}, 4.0),
]


@pytest.mark.parametrize("text,column", INVALID)
def test_invalid_expressions_report_exact_column(text, column):
    with pytest.raises(ex.ExpressionError) as info:
        ex.parse(text)
    assert info.value.column == column


@pytest.mark.parametrize("text,bindings,value", VALID)
def test_valid_expressions(text, bindings, value):
    assert ex.evaluate(ex.parse(text), bindings) == pytest.approx(value, rel=1e-15)


def test_grammar_suite_has_25_cases():
    assert len(INVALID) + len(VALID) == 25


def test_unknown_variable_is_named():
    with pytest.raises(ex.ExpressionError, match="'q'"):
        ex.parse("z*q")


def test_allowed_variables_are_enforced():
    with pytest.raises(ex.ExpressionError, match="x1"):
        ex.parse("x1 + y1", allowed=("y1", "y2"))


@pytest.mark.parametrize(
    "text,bindings,value",
    [("sin(0)", {}, 0.0), ("2 + sin(2*pi*y1)", {"y1": 0.25}, 3.0), ("z/(1+z^2)", {"z": 2.0}, 0.4)],
)
def test_eval_examples(text, bindings, value):
    assert ex.evaluate(ex.parse(text), bindings) == pytest.approx(value, abs=1e-15)


def test_unbound_variable_raises():
    with pytest.raises(KeyError):
        ex.evaluate(ex.parse("y1 + z"), {"y1": 1.0})


def test_eval_is_vectorised_and_pure():
    e = ex.parse("exp(-t)*cos(2*pi*y1)")
    y = np.linspace(0, 1, 7)
    a = ex.evaluate(e, {"t": 0.3, "y1": y})
    b = ex.evaluate(e, {"t": 0.3, "y1": y})
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, math.exp(-0.3) * np.cos(2 * np.pi * y), rtol=1e-15)


def test_min_abs_divisor():
    e = ex.parse("1/(z - 1) + 1/y1")
    assert ex.min_abs_divisor(e, {"z": np.array([0.0, 3.0]), "y1": 0.5}) == pytest.approx(0.5)


# ---------------------------------------------------------------- round trip

_leaf = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(ex.Num),
    st.sampled_from(sorted(ex.VARIABLES)).map(ex.Var),
    st.sampled_from(sorted(ex.CONSTANTS)).map(ex.Const),
)


def _extend(children):
    return st.one_of(
        children.map(ex.Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: ex.BinOp(*a)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "abs"]), children).map(lambda a: ex.Call(a[0], (a[1],))),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda a: ex.Call(a[0], (a[1], a[2]))),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=100, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    text = ex.to_source(tree)
    again = ex.parse(text)
    assert again.ast == tree
    assert ex.to_source(again.ast) == text
