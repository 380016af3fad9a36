import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gexpect import EvaluationError, InputError, ParseError, evaluate, format_expr, growth_diagnostic, parse
from gexpect.dsl import BinOp, Call, Div, Neg, Num, Pow, Var


def test_power_ast():
    f = parse("x1^2", 1)
    assert f.expr == Pow(Var(1, 1), 2)


def test_call_spread_ast():
    f = parse("max(x2 - x1, 0)", 2)
    assert f.expr == Call("max", (BinOp("-", Var(2, 1), Var(1, 1)), Num(0.0)))


def test_x0_is_unknown():
    with pytest.raises(ParseError, match="unknown") as exc:
        parse("x0", 1)
    assert exc.value.offset == 0


def test_arity_overflow_offset():
    with pytest.raises(ParseError) as exc:
        parse("x1 + x3", 2)
    assert exc.value.offset == 5


@pytest.mark.parametrize("text,offset", [("x1 +", 4), ("(x1", 3), ("x1 ) ", 3), ("foo(x1)", 0),
                                         ("x1 $ 2", 3)])
def test_malformed_offsets(text, offset):
    with pytest.raises(ParseError) as exc:
        parse(text, 1)
    assert exc.value.offset == offset


def test_parse_error_is_input_error():
    assert issubclass(ParseError, InputError)


@pytest.mark.parametrize("text,point,value", [
    ("x1^2", [3.0], 9.0),
    ("abs(x1)", [-2.0], 2.0),
    ("min(x1, x2) + exp(0)", [1.0, 5.0], 2.0),
    ("-x1^2", [3.0], -9.0),
    ("2^3^2", [0.0], 64.0),
    ("x1 - x2 - x1", [1.0, 2.0], -2.0),
    ("8 / 4 / 2", [0.0], 1.0),
    ("1 + 2 * 3", [0.0], 7.0),
    ("x1**2", [4.0], 16.0),
])
def test_evaluate_examples(text, point, value):
    f = parse(text, len(point))
    assert evaluate(f, point) == value


def test_vector_variables():
    f = parse("x1_1 * x2_2", 2, d=2)
    assert evaluate(f, [2.0, 0.0, 0.0, 5.0]) == 10.0
    with pytest.raises(ParseError):
        parse("x1", 1, d=2)
    with pytest.raises(ParseError):
        parse("x1_3", 1, d=2)


def test_guarded_division():
    f = parse("1 / x1", 1)
    assert evaluate(f, [4.0]) == 0.25
    with pytest.raises(EvaluationError):
        evaluate(f, [0.0])
    with pytest.raises(EvaluationError):
        evaluate(f, [1e-13])


def test_nan_never_escapes():
    with pytest.raises(EvaluationError):
        evaluate(parse("sqrt(x1)", 1), [-1.0])
    with pytest.raises(InputError):
        evaluate(parse("x1", 1), [float("nan")])


def test_vectorized_shape():
    f = parse("x1 * x2", 2)
    out = f(np.ones((4, 3, 2)))
    assert out.shape == (4, 3)


def test_flagging():
    assert parse("exp(x1)", 1).flagged
    assert parse("sqrt(abs(x1))", 1).flagged
    assert not parse("max(x1, 0)^3", 1).flagged


# -- random expressions ----------------------------------------------------------

def expressions(arity):
    leaves = st.one_of(
        st.integers(0, 9).map(str),
        st.sampled_from(["0.5", "1.25", "3"]),
        st.integers(1, arity).map(lambda i: f"x{i}"),
    )

    def extend(inner):
        return st.one_of(
            st.tuples(inner, st.sampled_from(["+", "-", "*"]), inner).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
            st.tuples(inner, st.integers(0, 3)).map(lambda t: f"{t[0]}^{t[1]}"),
            inner.map(lambda e: f"-{e}"),
            inner.map(lambda e: f"abs({e})"),
            st.tuples(st.sampled_from(["min", "max"]), inner, inner).map(lambda t: f"{t[0]}({t[1]}, {t[2]})"),
            inner.map(lambda e: f"exp(min({e}, 3))"),
            inner.map(lambda e: f"sqrt(abs({e}))"),
            st.tuples(inner, inner).map(lambda t: f"({t[0]}) / (2 + abs({t[1]}))"),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(expressions(3))
def test_parse_format_idempotent(text):
    f = parse(text, 3)
    g = parse(format_expr(f.expr), 3)
    assert g.expr == f.expr
    assert format_expr(g.expr) == format_expr(f.expr)


def reference(node, x):
    """Direct recursive evaluation with Python floats."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x[node.index - 1]
    if isinstance(node, Neg):
        return -reference(node.arg, x)
    if isinstance(node, BinOp):
        a, b = reference(node.left, x), reference(node.right, x)
        return a + b if node.op == "+" else a - b if node.op == "-" else a * b
    if isinstance(node, Div):
        return reference(node.left, x) / reference(node.right, x)
    if isinstance(node, Pow):
        base = reference(node.base, x)
        out = 1.0
        for i in range(node.exponent):
            out = base if i == 0 else out * base
        return out
    args = [reference(a, x) for a in node.args]
    if node.name == "abs":
        return abs(args[0])
    if node.name == "exp":
        return float(np.exp(args[0]))
    if node.name == "sqrt":
        return math.sqrt(args[0])
    out = args[0]
    for a in args[1:]:
        out = min(out, a) if node.name == "min" else max(out, a)
    return out


def test_reference_evaluator_agrees_exactly():
    texts = []

    @settings(max_examples=1000, database=None, derandomize=True)
    @given(expressions(3))
    def collect(text):
        texts.append(text)

    collect()
    rng = np.random.default_rng(7)
    for i in range(1000):
        f = parse(texts[i % len(texts)], 3)
        x = rng.normal(scale=2.0, size=3)
        assert evaluate(f, x) == reference(f.expr, [float(v) for v in x]), f.source_text


def test_growth_linear():
    r = growth_diagnostic(parse("x1", 1), samples=200, seed=0)
    assert r.k == 0
    assert r.C == pytest.approx(1.0, rel=1e-3)
    assert not r.non_polynomial


def test_growth_cubic():
    r = growth_diagnostic(parse("x1^3", 1), samples=200, seed=0)
    assert r.k == pytest.approx(2.0, abs=0.25)
    assert r.k_variance < 0.25


def test_growth_exp_flagged():
    r = growth_diagnostic(parse("exp(x1)", 1), samples=200, seed=0)
    assert r.non_polynomial


def test_growth_needs_samples():
    with pytest.raises(InputError):
        growth_diagnostic(parse("x1", 1), samples=10)


@pytest.mark.parametrize("text", ["x1^4", "x1^2 * x2", "max(x1, x2)^2"])
def test_growth_stabilizes_for_polynomials(text):
    r = growth_diagnostic(parse(text, 2), samples=200, seed=1)
    assert r.k_variance < 0.25
    assert not r.non_polynomial
