"""Payoff expression language over cylinder coordinates.

Variables are ``x1 .. xn`` (one per observation time) for d = 1, or
``x{i}_{j}`` for component j of the i-th d-dimensional block.  The grammar
is in ``docs/grammar.ebnf``.  Precedence from tightest: ``^``, unary minus,
``* /``, ``+ -``; binary operators associate to the left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import EvaluationError, InputError, ParseError

DEFAULT_GUARD = 1e-12
FUNCTIONS = {"abs": (1, 1), "exp": (1, 1), "sqrt": (1, 1), "min": (2, None), "max": (2, None)}
NON_POLYNOMIAL = frozenset({"exp", "sqrt"})


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based time index
    comp: int = 1  # 1-based component within the block


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"
    guard: float = field(default=DEFAULT_GUARD, compare=False)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Div, Pow, Call]


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)
_VAR = re.compile(r"x([1-9]\d*)(?:_([1-9]\d*))?$")


def _tokenize(text: str):
    raw = text.encode("utf-8")
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", len(text[:start].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text, arity, d, guard):
        self.tokens = _tokenize(text)
        self.i = 0
        self.arity = arity
        self.d = d
        self.guard = guard

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = BinOp("*", node, rhs) if op == "*" else Div(node, rhs, self.guard)
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] in ("^", "**"):
            self.take()
            kind, val, off = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise ParseError("exponent must be a non-negative integer literal", off)
            node = Pow(node, int(val))
        return node

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val in FUNCTIONS:
                return self.call(val, off)
            return self.variable(val, off)
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off)

    def call(self, name, off):
        self.expect("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ParseError(f"{name} takes {'at least ' if hi is None else ''}{lo} argument(s), got {len(args)}", off)
        return Call(name, tuple(args))

    def variable(self, name, off):
        m = _VAR.match(name)
        if m is None:
            raise ParseError(f"unknown identifier {name!r} (variables are x1, x2, ...)", off)
        idx = int(m.group(1))
        comp = int(m.group(2)) if m.group(2) else None
        if idx > self.arity:
            raise ParseError(f"variable {name!r} exceeds arity {self.arity}", off)
        if comp is None:
            if self.d != 1:
                raise ParseError(f"variable {name!r} needs a component index x{idx}_j for d = {self.d}", off)
            comp = 1
        if comp > self.d:
            raise ParseError(f"component {comp} of {name!r} exceeds dimension {self.d}", off)
        return Var(idx, comp)


# -- formatting ----------------------------------------------------------------

def format_expr(node: Expr) -> str:
    """Canonical, fully parenthesized text; parse(format(e)) == e."""
    if isinstance(node, Num):
        if node.value < 0:
            return f"(-{format_expr(Num(-node.value))})"
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}_{node.comp}"
    if isinstance(node, Neg):
        return f"(-{format_expr(node.arg)})"
    if isinstance(node, BinOp):
        return f"({format_expr(node.left)} {node.op} {format_expr(node.right)})"
    if isinstance(node, Div):
        return f"({format_expr(node.left)} / {format_expr(node.right)})"
    if isinstance(node, Pow):
        return f"({format_expr(node.base)}^{node.exponent})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(format_expr(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def walk(node: Expr):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.arg)
    elif isinstance(node, (BinOp, Div)):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Pow):
        yield from walk(node.base)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


# -- evaluation ----------------------------------------------------------------

def ipow(x, k: int):
    """x**k by k-1 successive multiplications (deterministic rounding)."""
    if k == 0:
        return np.ones_like(x) if isinstance(x, np.ndarray) else 1.0
    out = x
    for _ in range(k - 1):
        out = out * x
    return out


def _compile(node: Expr, d: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(node, Num):
        v = node.value
        return lambda X: np.full(X.shape[:-1], v)
    if isinstance(node, Var):
        col = (node.index - 1) * d + (node.comp - 1)
        return lambda X: X[..., col]
    if isinstance(node, Neg):
        f = _compile(node.arg, d)
        return lambda X: -f(X)
    if isinstance(node, BinOp):
        f, g = _compile(node.left, d), _compile(node.right, d)
        if node.op == "+":
            return lambda X: f(X) + g(X)
        if node.op == "-":
            return lambda X: f(X) - g(X)
        return lambda X: f(X) * g(X)
    if isinstance(node, Div):
        f, g = _compile(node.left, d), _compile(node.right, d)
        guard = node.guard

        def div(X):
            den = g(X)
            if np.any(np.abs(den) < guard):
                raise EvaluationError(f"division by |denominator| < {guard:g}")
            return f(X) / den

        return div
    if isinstance(node, Pow):
        f, k = _compile(node.base, d), node.exponent
        return lambda X: ipow(f(X), k)
    if isinstance(node, Call):
        fs = [_compile(a, d) for a in node.args]
        if node.name == "abs":
            return lambda X: np.abs(fs[0](X))
        if node.name == "exp":
            return lambda X: np.exp(fs[0](X))
        if node.name == "sqrt":
            def sqrt(X):
                v = fs[0](X)
                if np.any(v < 0):
                    raise EvaluationError("sqrt of a negative value")
                return np.sqrt(v)
            return sqrt
        red = np.minimum if node.name == "min" else np.maximum

        def minmax(X):
            out = fs[0](X)
            for f in fs[1:]:
                out = red(out, f(X))
            return out

        return minmax
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """Parsed payoff phi on R^{n d}; calling it evaluates on arrays of shape (..., n*d)."""

    source_text: str
    expr: Expr
    arity: int
    d: int = 1
    declared_growth: int = 2
    guard: float = DEFAULT_GUARD
    _fn: Callable = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_fn", _compile(self.expr, self.d))

    @property
    def flagged(self) -> bool:
        """True when exp or sqrt appear (outside the polynomial-growth class)."""
        return any(isinstance(n, Call) and n.name in NON_POLYNOMIAL for n in walk(self.expr))

    def format(self) -> str:
        return format_expr(self.expr)

    def __call__(self, points) -> np.ndarray:
        X = np.asarray(points, dtype=float)
        if X.shape[-1] != self.arity * self.d:
            raise InputError(f"expected last axis of size {self.arity * self.d}, got {X.shape[-1]}")
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.asarray(self._fn(X), dtype=float)
        if np.any(np.isnan(out)):
            raise EvaluationError(f"expression {self.source_text!r} produced NaN")
        return out


def parse(text: str, arity: int, d: int = 1, declared_growth: int | None = None,
          guard: float = DEFAULT_GUARD) -> FunctionalSpec:
    """Parse payoff text over ``arity`` time blocks of dimension ``d``."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", 0)
    if arity < 1 or d < 1:
        raise InputError("arity and dimension must be positive")
    expr = _Parser(text, arity, d, guard).parse()
    if declared_growth is None:
        declared_growth = _degree_bound(expr)
    return FunctionalSpec(text, expr, arity, d, declared_growth, guard)


def _degree_bound(node: Expr) -> int:
    """Crude syntactic polynomial-degree bound, used as default growth."""
    if isinstance(node, Num):
        return 0
    if isinstance(node, Var):
        return 1
    if isinstance(node, Neg):
        return _degree_bound(node.arg)
    if isinstance(node, BinOp):
        a, b = _degree_bound(node.left), _degree_bound(node.right)
        return a + b if node.op == "*" else max(a, b)
    if isinstance(node, Div):
        return _degree_bound(node.left)
    if isinstance(node, Pow):
        return _degree_bound(node.base) * node.exponent
    if isinstance(node, Call):
        degs = [_degree_bound(a) for a in node.args]
        if node.name == "sqrt":
            return max(1, (degs[0] + 1) // 2)
        return max(degs)
    return 0


def evaluate(f: FunctionalSpec, point) -> float:
    """Evaluate at a single point in R^{n d}."""
    X = np.asarray(point, dtype=float).reshape(-1)
    if not np.all(np.isfinite(X)):
        raise InputError("evaluation point must be finite")
    return float(f(X))


@dataclass
class GrowthReport:
    radii: list
    slopes: list
    local_k: list
    k_fit: float
    k: int
    C: float
    k_variance: float
    syntactic_flag: bool
    non_polynomial: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def growth_diagnostic(f: FunctionalSpec, samples: int = 400,
                      radii=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0), seed: int = 0,
                      rel_step: float = 1e-4) -> GrowthReport:
    """Fit (C, k) in |f(x) - f(y)| <= C (1 + |x|^k + |y|^k) |x - y| from sampled pairs.

    Pairs are drawn on spheres of increasing radius with a small random
    displacement; the largest difference quotient per radius gives a slope
    profile whose log-log increments estimate k.  For k = 0 the weight is
    taken as 1, so C is a plain Lipschitz constant.
    """
    if samples < 100:
        raise InputError("growth diagnostic needs at least 100 samples")
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 4:
        raise InputError("need at least four radii")
    rng = np.random.default_rng(seed)
    dim = f.arity * f.d
    xs, ys, qs = [], [], []
    slopes = []
    for r in radii:
        u = rng.standard_normal((samples, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        x = r * u * rng.uniform(0.5, 1.0, (samples, 1)) ** 0.25
        v = rng.standard_normal((samples, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        y = x + rel_step * max(1.0, r) * v
        with np.errstate(over="ignore", invalid="ignore"):
            q = np.abs(f(x) - f(y)) / np.linalg.norm(x - y, axis=1)
        q = np.where(np.isfinite(q), q, np.finfo(float).max)
        slopes.append(float(q.max()))
        xs.append(x)
        ys.append(y)
        qs.append(q)
    logs = np.log(np.maximum(slopes, 1e-300))
    local_k = np.diff(logs) / np.diff(np.log(radii))
    top = local_k[-3:]
    k_var = float(np.var(top))
    k_fit = float(np.median(top))
    trend = float(top[-1] - top[0])
    k_int = max(0, int(np.ceil(k_fit - 0.25)))
    X = np.concatenate(xs)
    Y = np.concatenate(ys)
    Q = np.concatenate(qs)
    if k_int == 0:
        w = np.ones(len(Q))
    else:
        w = 1.0 + np.linalg.norm(X, axis=1) ** k_int + np.linalg.norm(Y, axis=1) ** k_int
    C = float(np.max(Q / w))
    non_poly = f.flagged or k_var >= 0.25 or trend > 0.5
    return GrowthReport(radii.tolist(), slopes, local_k.tolist(), k_fit, k_int, C, k_var,
                        f.flagged, bool(non_poly))
