import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engelcalc import expr as ex
from engelcalc.expr import (
    Add,
    Constant,
    Cos,
    Divide,
    EvaluationError,
    ExprSyntaxError,
    IntPower,
    Multiply,
    NamedConstant,
    Negate,
    Sin,
    Subtract,
    UnknownIdentifierError,
    Variable,
    evaluate,
    free_variables,
    parse_scalar_expr,
    partial_derivative,
    simplify,
    to_text,
)

VARS = ("x", "y", "z", "t", "g", "theta")


def _binding(rng, names):
    return {n: float(v) for n, v in zip(names, rng.uniform(-1.0, 1.0, len(names)))}


# ---------------------------------------------------------------------------
# parsing


def test_parse_single_variable():
    assert parse_scalar_expr("z", {"x", "y", "z"}) == Variable("z")


def test_parse_function_with_precedence():
    e = parse_scalar_expr("cos(3*theta/2)", {"theta"})
    expected = Cos(Divide(Multiply(Constant(3), Variable("theta")), Constant(2)))
    assert e == expected


def test_parse_rejects_form_syntax():
    with pytest.raises(UnknownIdentifierError) as err:
        parse_scalar_expr("dy - z*dx", {"x", "y", "z"})
    assert err.value.name == "dy"


def test_parse_reports_byte_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse_scalar_expr("x + $", {"x"})
    assert err.value.offset == 4


@pytest.mark.parametrize(
    "text,expected",
    [
        ("1 + 2*3", 7.0),
        ("2*3 - 4/2", 4.0),
        ("-2^2", -4.0),
        ("2^-2", 0.25),
        ("2^3^2", 512.0),
        ("1 - 2 - 3", -4.0),
        ("12/3/2", 2.0),
        ("2*-3", -6.0),
        ("cos(pi)", -1.0),
        ("1.5e1 + 0.5", 15.5),
    ],
)
def test_parse_precedence_and_literals(text, expected):
    assert evaluate(parse_scalar_expr(text, ()), {}) == pytest.approx(expected)


def test_power_requires_integer_literal():
    with pytest.raises(ExprSyntaxError):
        parse_scalar_expr("x^2.5", {"x"})
    with pytest.raises(ExprSyntaxError):
        parse_scalar_expr("x^y", {"x", "y"})


def test_function_requires_parentheses():
    with pytest.raises(ExprSyntaxError):
        parse_scalar_expr("sin x", {"x"})


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_sum():
    e = parse_scalar_expr("x + y", {"x", "y"})
    assert evaluate(e, {"x": 1, "y": 2}) == 3.0


def test_evaluate_named_constant():
    assert evaluate(parse_scalar_expr("cos(pi)", ()), {}) == pytest.approx(-1.0)


def test_evaluate_division_by_zero_reports_path():
    e = parse_scalar_expr("1 + 1/x", {"x"})
    with pytest.raises(EvaluationError) as err:
        evaluate(e, {"x": 0.0})
    assert err.value.path == (1,)


def test_evaluate_unbound_variable():
    with pytest.raises(EvaluationError, match="unbound variable 'y'"):
        evaluate(parse_scalar_expr("x + y", {"x", "y"}), {"x": 1.0})


# ---------------------------------------------------------------------------
# differentiation


def test_derivative_identity():
    assert partial_derivative(Variable("z"), "z") == Constant(1)


def test_derivative_sin():
    assert partial_derivative(Sin(Variable("x")), "x") == Cos(Variable("x"))


def test_derivative_chain_rule_against_finite_differences():
    e = parse_scalar_expr("cos(t*(g+pi))", {"t", "g"})
    d = partial_derivative(e, "t")
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(10):
        b = _binding(rng, ("t", "g"))
        up = evaluate(e, {**b, "t": b["t"] + h})
        dn = evaluate(e, {**b, "t": b["t"] - h})
        assert evaluate(d, b) == pytest.approx((up - dn) / (2 * h), abs=1e-8)


def test_derivative_free_variables_shrink():
    e = parse_scalar_expr("x*y + sin(z)", {"x", "y", "z"})
    d = partial_derivative(e, "x")
    assert free_variables(d) <= free_variables(e)


# ---------------------------------------------------------------------------
# simplify


def test_simplify_drops_zero_products():
    e = parse_scalar_expr("0*x + y", {"x", "y"})
    assert simplify(e) == Variable("y")


def test_simplify_pythagorean_identity():
    t = Variable("t")
    e = Add(IntPower(Sin(t), 2), IntPower(Cos(t), 2))
    assert simplify(e) == Constant(1)


def test_simplify_pythagorean_after_normalization():
    t = Variable("t")
    e = Add(Multiply(Cos(t), Cos(t)), Multiply(Sin(t), Sin(t)))
    assert simplify(e) == Constant(1)
    rng = np.random.default_rng(3)
    for _ in range(100):
        b = _binding(rng, ("t",))
        assert evaluate(e, b) == pytest.approx(1.0, abs=1e-12)


def test_simplify_cancels_equal_subtrees():
    e = parse_scalar_expr("(x + sin(y)) - (x + sin(y))", {"x", "y"})
    assert simplify(e) == Constant(0)


POOL = [
    "x*y + sin(z)",
    "cos(t*(g+pi)) - sin(g)^3",
    "exp(x/3)*cos(y) + z^2",
    "(x + y)^2 - x^2 - 2*x*y",
    "sin(x)*cos(y) / (2 + z^2)",
    "1/(2 + x^2) + exp(-t)",
    "x^3 - 2*x*y + y*z*t",
    "cos(theta/2)*sin(theta/2)",
]


@pytest.mark.parametrize("text", POOL)
def test_simplify_preserves_value(text):
    e = parse_scalar_expr(text, VARS)
    s = simplify(e)
    rng = np.random.default_rng(hash(text) % 2**32)
    for _ in range(100):
        b = _binding(rng, VARS)
        lhs = evaluate(e, b)
        rhs = evaluate(s, b)
        assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(lhs))


@pytest.mark.parametrize("text", POOL)
def test_simplify_idempotent_and_shrinks_vars(text):
    e = parse_scalar_expr(text, VARS)
    s = simplify(e)
    assert simplify(s) == s
    assert free_variables(s) <= free_variables(e)


# ---------------------------------------------------------------------------
# printing round trip


@pytest.mark.parametrize("text", POOL + ["-x^2", "x*-2", "(-2)^3", "x - (y - z)"])
def test_round_trip_parse_print(text):
    e = parse_scalar_expr(text, VARS)
    assert parse_scalar_expr(to_text(e), VARS) == e


def _expr_strategy():
    leaves = st.one_of(
        st.sampled_from([Variable(n) for n in VARS]),
        st.floats(
            min_value=-4.0, max_value=4.0, allow_nan=False, allow_infinity=False
        ).map(Constant),
        st.just(NamedConstant("pi")),
    )

    def extend(children):
        return st.one_of(
            st.tuples(children, children).map(lambda p: Add(*p)),
            st.tuples(children, children).map(lambda p: Subtract(*p)),
            st.tuples(children, children).map(lambda p: Multiply(*p)),
            st.tuples(children, children).map(lambda p: Divide(*p)),
            children.map(Negate),
            children.map(Sin),
            children.map(Cos),
            st.tuples(children, st.integers(min_value=0, max_value=3)).map(
                lambda p: IntPower(*p)
            ),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(_expr_strategy())
@settings(max_examples=150, deadline=None)
def test_round_trip_arbitrary_trees(e):
    assert parse_scalar_expr(to_text(e), VARS) == e


@given(_expr_strategy())
@settings(max_examples=100, deadline=None)
def test_simplify_idempotent_arbitrary_trees(e):
    s = simplify(e)
    assert simplify(s) == s


# ---------------------------------------------------------------------------
# finite-difference law for derivatives (second-order convergence)

SMOOTH_POOL = [
    "sin(2*x)*cos(y)",
    "exp(x/2)*sin(y + z)",
    "cos(t*(g+pi))",
    "sin(x)^3 + cos(y)^2",
    "exp(-x^2/4)*cos(2*y)",
]


def _fd_error(e, var, names, b, h):
    d = partial_derivative(e, var)
    up = evaluate(e, {**b, var: b[var] + h})
    dn = evaluate(e, {**b, var: b[var] - h})
    return abs(evaluate(d, b) - (up - dn) / (2 * h))


def test_derivative_matches_central_differences_second_order():
    rng = np.random.default_rng(11)
    errors = {1e-3: [], 5e-4: []}
    cases = 0
    for text in SMOOTH_POOL:
        e = parse_scalar_expr(text, VARS)
        for name in sorted(free_variables(e)):
            for _ in range(10):
                b = _binding(rng, VARS)
                for h in errors:
                    errors[h].append(_fd_error(e, name, VARS, b, h))
                cases += 1
    assert cases >= 100
    for h, errs in errors.items():
        assert max(errs) <= 100.0 * h**2
    ratio = max(errors[1e-3]) / max(errors[5e-4])
    assert 3.5 <= ratio <= 4.5
