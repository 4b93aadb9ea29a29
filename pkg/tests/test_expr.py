import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from miold.expr import (
    NONZERO, NUMERICALLY_ZERO, PROVEN_ZERO, Const, DomainError, Param, ParseError, Var,
    compile_exprs, cos, diff, evaluate, exp, free_vars, is_zero, parse, sdiff, simplify, sin,
    sqrt, substitute, to_string,
)
from miold.expr.canon import canon, to_expr
from miold.expr import linalg

NAMES = ["x1", "x2", "x3"]
PARAMS = {"a": 1.7, "b": 0.6}


def _leaves():
    return st.one_of(
        st.integers(1, 3).map(Var),
        st.fractions(min_value=-3, max_value=3, max_denominator=4).map(Const),
        st.sampled_from(["a", "b"]).map(Param),
    )


def _grow(children):
    """Expressions that stay defined everywhere: denominators are bounded away from zero."""
    return st.one_of(
        st.tuples(children, children).map(lambda p: p[0] + p[1]),
        st.tuples(children, children).map(lambda p: p[0] - p[1]),
        st.tuples(children, children).map(lambda p: p[0] * p[1]),
        st.tuples(children, children).map(lambda p: p[0] / (2 + cos(p[1]))),
        st.tuples(children, st.integers(2, 3)).map(lambda p: p[0] ** p[1]),
        children.map(sin),
        children.map(cos),
        children.map(lambda c: exp(sin(c))),
        children.map(lambda c: sqrt(1 + c * c)),
    )


exprs = st.recursive(_leaves(), _grow, max_leaves=8)
points = st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3)


def close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


# ---------------------------------------------------------------- properties

@given(exprs, points)
def test_print_parse_round_trip(e, x):
    again = parse(to_string(e, NAMES), NAMES)
    assert close(evaluate(again, x, PARAMS), evaluate(e, x, PARAMS))


@given(exprs, points)
def test_simplify_preserves_value(e, x):
    assert close(evaluate(simplify(e), x, PARAMS), evaluate(e, x, PARAMS), 1e-8)


@given(exprs)
def test_canonical_form_is_idempotent(e):
    once = simplify(e)
    assert canon(once).key == canon(e).key
    assert simplify(once) is once


@given(exprs, points, st.integers(1, 3))
def test_derivative_matches_central_difference(e, x, i):
    h = 1e-6
    up, dn = list(x), list(x)
    up[i - 1] += h
    dn[i - 1] -= h
    fd = (evaluate(e, up, PARAMS) - evaluate(e, dn, PARAMS)) / (2 * h)
    sym = evaluate(diff(e, i), x, PARAMS)
    assert abs(sym - fd) <= 1e-5 * max(1.0, abs(sym))
    assert close(evaluate(sdiff(e, i), x, PARAMS), sym, 1e-8)


@given(exprs, exprs, points, st.integers(1, 3))
def test_product_rule(e, f, x, i):
    lhs = evaluate(diff(e * f, i), x, PARAMS)
    rhs = evaluate(diff(e, i) * f + e * diff(f, i), x, PARAMS)
    assert close(lhs, rhs)


@given(st.lists(exprs, min_size=1, max_size=4), points)
def test_codegen_agrees_with_interpreter(es, x):
    fn = compile_exprs(es, PARAMS)
    for got, e in zip(fn(x), es):
        assert close(got, evaluate(e, x, PARAMS))


@given(exprs)
def test_difference_with_simplified_form_is_proven_zero(e):
    assert is_zero(e - simplify(e)).kind == PROVEN_ZERO


@given(exprs, st.fractions(min_value=1, max_value=5, max_denominator=3))
def test_nonzero_shift_is_detected(e, c):
    verdict = is_zero(e - e + Const(c))
    assert verdict.kind == NONZERO and verdict.value == pytest.approx(float(c))


@given(exprs, exprs, points)
def test_substitution_commutes_with_evaluation(e, f, x):
    g = substitute(e, {1: f})
    y = [evaluate(f, x, PARAMS)] + list(x[1:])
    assert close(evaluate(g, x, PARAMS), evaluate(e, y, PARAMS), 1e-8)


# ---------------------------------------------------------------- zero testing

@pytest.mark.parametrize("text", [
    "sin(x1)^2 + cos(x1)^2 - 1",
    "sin(2*x1) - 2*sin(x1)*cos(x1)",
    "cos(x1 + x2) - cos(x1)*cos(x2) + sin(x1)*sin(x2)",
    "tan(x1) - sin(x1)/cos(x1)",
    "exp(x1 + x2) - exp(x1)*exp(x2)",
    "sqrt(x1)^2 - x1",
    "(x1^2 - x2^2)/(x1 - x2) - x1 - x2",
    "a*x1 - x1*a",
])
def test_identities_are_proven(text):
    v = is_zero(parse(text, NAMES))
    assert v.kind == PROVEN_ZERO and v.certified and v.confidence == 1.0


def test_identity_outside_the_rewrite_rules_is_numerical():
    v = is_zero(parse("ln(exp(x1)) - x1", NAMES))
    assert v.kind == NUMERICALLY_ZERO and not v.certified
    assert v.samples == 32 and 0.99 < v.confidence < 1.0
    assert v.max_residual < 1e-12


def test_nonzero_has_reproducible_witness():
    e = parse("x1 - x1^2 + a*x2", NAMES)
    v1, v2 = is_zero(e, seed=5), is_zero(e, seed=5)
    assert v1.kind == NONZERO and v1.witness == v2.witness
    w = v1.witness
    assert close(evaluate(e, w["x"], w["params"]), v1.value)
    # witnesses are drawn from [-2, 2] with parameters in (0.1, 10)
    assert all(-2 <= c <= 2 for c in w["x"])
    assert all(0.1 < p < 10 for p in w["params"].values())


def test_threshold_is_relative_to_term_size():
    # a large cancellation that the canonical form cannot see through
    e = parse("1e6*ln(exp(x1)) - 1e6*x1", NAMES)
    assert is_zero(e).kind == NUMERICALLY_ZERO


def test_sqrt_of_square_is_not_the_identity():
    assert is_zero(parse("sqrt(x1^2) - x1", NAMES)).kind == NONZERO


# ---------------------------------------------------------------- parsing and evaluation

def test_parse_reports_position():
    with pytest.raises(ParseError) as info:
        parse("x1 + * 2", NAMES)
    assert info.value.pos == 5 and "^" in str(info.value)


def test_parse_rejects_unknown_identifier_when_params_are_closed():
    with pytest.raises(ParseError, match="unknown identifier 'b'"):
        parse("b*x1", NAMES, params={"a"})


def test_parse_precedence_and_defs():
    e = parse("-x1^2 + 2*k/4", NAMES, defs={"k": parse("x2 + 1", NAMES)})
    assert evaluate(e, [3.0, 1.0, 0.0]) == pytest.approx(-9 + 1)
    assert free_vars(e) == {1, 2}
    assert evaluate(parse("x1^(1/2)", NAMES), [4.0]) == pytest.approx(2.0)
    with pytest.raises(ParseError):
        parse("x1^x2", NAMES)     # exponents are rational literals


@pytest.mark.parametrize("text,x", [
    ("ln(x1)", [-1.0]), ("1/(x1 - x2)", [1.0, 1.0]), ("sqrt(x1)", [-0.5]),
])
def test_domain_errors(text, x):
    e = parse(text, NAMES)
    with pytest.raises(DomainError):
        evaluate(e, x)
    with pytest.raises(DomainError):
        compile_exprs([e], {})(x)


def test_unbound_parameter_raises_keyerror():
    with pytest.raises(KeyError):
        evaluate(parse("c*x1", NAMES), [1.0])


def test_codegen_folds_parameter_only_subtrees():
    e = parse("(a*b + 1)*x1 + 0*x2", NAMES)
    fn = compile_exprs([e], PARAMS)
    assert "a" not in fn.source.replace("def", "")
    assert fn([2.0, 5.0, 0.0])[0] == pytest.approx((1.7 * 0.6 + 1) * 2)


# ---------------------------------------------------------------- exact linear algebra

def test_symbolic_inverse_against_numpy():
    rng = random.Random(1)
    texts = [["cos(x1)", "x2", "1"], ["0", "2", "sin(x3)"], ["x1*x2", "1", "3"]]
    A = [[canon(parse(t, NAMES)) for t in row] for row in texts]
    inv, det = linalg.inverse(A)
    for _ in range(5):
        x = [rng.uniform(-1, 1) for _ in range(3)]
        An = np.array([[evaluate(to_expr(a), x) for a in row] for row in A])
        In = np.array([[evaluate(to_expr(a), x) for a in row] for row in inv])
        assert np.allclose(In, np.linalg.inv(An), rtol=1e-9, atol=1e-12)
        assert math.isclose(evaluate(to_expr(det), x), np.linalg.det(An), rel_tol=1e-9)
    prod = linalg.matmul(A, inv)
    for i in range(3):
        for j in range(3):
            assert prod[i][j].constant_value() == Fraction(int(i == j))
