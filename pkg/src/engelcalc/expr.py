"""Symbolic scalar expressions over named real variables.

The node set is deliberately small: constants, named constants (``pi``),
variables, the four arithmetic operations, unary negation, integer powers,
and ``sin``/``cos``/``exp``.  Integer-only exponents keep differentiation
closed over the node set.  Trees are immutable and hashable, so they can be
shared freely between concurrent evaluators.

Simplification is a normalizing rewrite (constant folding, flattening of
sums and products with canonical term ordering, like-term collection, and
the ``sin^2 + cos^2`` collapse), not a general computer-algebra system.
Its correctness contract is numeric equivalence, which the test suite
checks at sampled bindings.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from . import _kernels

__all__ = [
    "ScalarExpr",
    "Constant",
    "NamedConstant",
    "Variable",
    "Negate",
    "Add",
    "Subtract",
    "Multiply",
    "Divide",
    "IntPower",
    "Sin",
    "Cos",
    "Exp",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "EvaluationError",
    "as_expr",
    "parse_scalar_expr",
    "partial_derivative",
    "evaluate",
    "evaluate_many",
    "simplify",
    "substitute",
    "free_variables",
    "to_text",
    "compile_program",
    "ZERO",
    "ONE",
    "PI",
]

NAMED_CONSTANT_VALUES = {"pi": math.pi}
FUNCTION_NAMES = ("sin", "cos", "exp")


class ExprError(ValueError):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name: str, offset: int):
        ExprError.__init__(self, f"unknown identifier '{name}' (byte offset {offset})")
        self.offset = offset
        self.name = name


class EvaluationError(ExprError):
    def __init__(self, message: str, path: tuple[int, ...]):
        loc = "/".join(str(i) for i in path) if path else "root"
        super().__init__(f"{message} (node path {loc})")
        self.path = path


class ScalarExpr:
    """Base class for expression nodes; construct via the subclasses."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Subtract(self, as_expr(other))

    def __rsub__(self, other):
        return Subtract(as_expr(other), self)

    def __mul__(self, other):
        return Multiply(self, as_expr(other))

    def __rmul__(self, other):
        return Multiply(as_expr(other), self)

    def __truediv__(self, other):
        return Divide(self, as_expr(other))

    def __rtruediv__(self, other):
        return Divide(as_expr(other), self)

    def __neg__(self):
        return Negate(self)

    def __pow__(self, exponent):
        return IntPower(self, exponent)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, slots=True)
class Constant(ScalarExpr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, slots=True)
class NamedConstant(ScalarExpr):
    name: str

    def __post_init__(self):
        if self.name not in NAMED_CONSTANT_VALUES:
            raise ExprError(f"unrecognized named constant '{self.name}'")


@dataclass(frozen=True, slots=True)
class Variable(ScalarExpr):
    name: str


@dataclass(frozen=True, slots=True)
class Negate(ScalarExpr):
    operand: ScalarExpr

    def __new__(cls, operand):
        # negation of a literal is a literal, keeping print/parse inverse
        if isinstance(operand, Constant):
            return Constant(-operand.value)
        return object.__new__(cls)


@dataclass(frozen=True, slots=True)
class Add(ScalarExpr):
    left: ScalarExpr
    right: ScalarExpr


@dataclass(frozen=True, slots=True)
class Subtract(ScalarExpr):
    left: ScalarExpr
    right: ScalarExpr


@dataclass(frozen=True, slots=True)
class Multiply(ScalarExpr):
    left: ScalarExpr
    right: ScalarExpr


@dataclass(frozen=True, slots=True)
class Divide(ScalarExpr):
    left: ScalarExpr
    right: ScalarExpr


@dataclass(frozen=True, slots=True)
class IntPower(ScalarExpr):
    base: ScalarExpr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or isinstance(self.exponent, bool):
            raise ExprError("IntPower exponent must be a Python int")


@dataclass(frozen=True, slots=True)
class Sin(ScalarExpr):
    operand: ScalarExpr


@dataclass(frozen=True, slots=True)
class Cos(ScalarExpr):
    operand: ScalarExpr


@dataclass(frozen=True, slots=True)
class Exp(ScalarExpr):
    operand: ScalarExpr


ZERO = Constant(0.0)
ONE = Constant(1.0)
PI = NamedConstant("pi")

_BINARY = (Add, Subtract, Multiply, Divide)
_UNARY_FN = (Sin, Cos, Exp)


def as_expr(value) -> ScalarExpr:
    if isinstance(value, ScalarExpr):
        return value
    if isinstance(value, (int, float)):
        return Constant(float(value))
    raise ExprError(f"cannot coerce {value!r} to a ScalarExpr")


def children(e: ScalarExpr) -> tuple[ScalarExpr, ...]:
    if isinstance(e, _BINARY):
        return (e.left, e.right)
    if isinstance(e, Negate) or isinstance(e, _UNARY_FN):
        return (e.operand,)
    if isinstance(e, IntPower):
        return (e.base,)
    return ()


def free_variables(e: ScalarExpr) -> frozenset[str]:
    if isinstance(e, Variable):
        return frozenset((e.name,))
    out: frozenset[str] = frozenset()
    for c in children(e):
        out = out | free_variables(c)
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: ScalarExpr, binding: Mapping[str, float]) -> float:
    """Evaluate at a full binding of the free variables.

    Division by zero raises :class:`EvaluationError` carrying the path of
    the offending node (child indices from the root).
    """
    return _eval(e, binding, ())


def _eval(e: ScalarExpr, b: Mapping[str, float], path: tuple[int, ...]) -> float:
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, NamedConstant):
        return NAMED_CONSTANT_VALUES[e.name]
    if isinstance(e, Variable):
        if e.name not in b:
            raise EvaluationError(f"unbound variable '{e.name}'", path)
        return float(b[e.name])
    if isinstance(e, Negate):
        return -_eval(e.operand, b, path + (0,))
    if isinstance(e, Add):
        return _eval(e.left, b, path + (0,)) + _eval(e.right, b, path + (1,))
    if isinstance(e, Subtract):
        return _eval(e.left, b, path + (0,)) - _eval(e.right, b, path + (1,))
    if isinstance(e, Multiply):
        return _eval(e.left, b, path + (0,)) * _eval(e.right, b, path + (1,))
    if isinstance(e, Divide):
        num = _eval(e.left, b, path + (0,))
        den = _eval(e.right, b, path + (1,))
        if den == 0.0:
            raise EvaluationError("division by zero", path)
        return num / den
    if isinstance(e, IntPower):
        base = _eval(e.base, b, path + (0,))
        if e.exponent < 0 and base == 0.0:
            raise EvaluationError("division by zero (negative power of zero)", path)
        try:
            return float(base**e.exponent)
        except OverflowError:
            return math.inf if base > 0 or e.exponent % 2 == 0 else -math.inf
    if isinstance(e, Sin):
        return math.sin(_eval(e.operand, b, path + (0,)))
    if isinstance(e, Cos):
        return math.cos(_eval(e.operand, b, path + (0,)))
    if isinstance(e, Exp):
        try:
            return math.exp(_eval(e.operand, b, path + (0,)))
        except OverflowError:
            return math.inf
    raise ExprError(f"unknown node type {type(e).__name__}")


def substitute(e: ScalarExpr, name: str, replacement) -> ScalarExpr:
    """Replace every occurrence of variable ``name`` by ``replacement``."""
    rep = as_expr(replacement)
    if isinstance(e, Variable):
        return rep if e.name == name else e
    if isinstance(e, _BINARY):
        return type(e)(substitute(e.left, name, rep), substitute(e.right, name, rep))
    if isinstance(e, Negate) or isinstance(e, _UNARY_FN):
        return type(e)(substitute(e.operand, name, rep))
    if isinstance(e, IntPower):
        return IntPower(substitute(e.base, name, rep), e.exponent)
    return e


# ---------------------------------------------------------------------------
# differentiation


def partial_derivative(e: ScalarExpr, v: str) -> ScalarExpr:
    """Exact symbolic partial derivative, returned in simplified form."""
    return simplify(_diff(e, v))


def _diff(e: ScalarExpr, v: str) -> ScalarExpr:
    if isinstance(e, (Constant, NamedConstant)):
        return ZERO
    if isinstance(e, Variable):
        return ONE if e.name == v else ZERO
    if isinstance(e, Negate):
        return Negate(_diff(e.operand, v))
    if isinstance(e, Add):
        return Add(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Subtract):
        return Subtract(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Multiply):
        return Add(
            Multiply(_diff(e.left, v), e.right), Multiply(e.left, _diff(e.right, v))
        )
    if isinstance(e, Divide):
        num = Subtract(
            Multiply(_diff(e.left, v), e.right), Multiply(e.left, _diff(e.right, v))
        )
        return Divide(num, IntPower(e.right, 2))
    if isinstance(e, IntPower):
        if e.exponent == 0:
            return ZERO
        return Multiply(
            Multiply(Constant(e.exponent), IntPower(e.base, e.exponent - 1)),
            _diff(e.base, v),
        )
    if isinstance(e, Sin):
        return Multiply(Cos(e.operand), _diff(e.operand, v))
    if isinstance(e, Cos):
        return Negate(Multiply(Sin(e.operand), _diff(e.operand, v)))
    if isinstance(e, Exp):
        return Multiply(Exp(e.operand), _diff(e.operand, v))
    raise ExprError(f"unknown node type {type(e).__name__}")


# ---------------------------------------------------------------------------
# pretty printing

_LEVEL_SUM = 1
_LEVEL_TERM = 2
_LEVEL_UNARY = 3
_LEVEL_POWER = 4
_LEVEL_ATOM = 5


def to_text(e: ScalarExpr) -> str:
    """Render with minimal parentheses; re-parsing yields an equal tree."""
    return _fmt(e, _LEVEL_SUM)


def _fmt(e: ScalarExpr, minlevel: int) -> str:
    text, level = _fmt_node(e)
    return f"({text})" if level < minlevel else text


def _format_float(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _fmt_node(e: ScalarExpr) -> tuple[str, int]:
    if isinstance(e, Constant):
        s = _format_float(e.value)
        return s, (_LEVEL_UNARY if e.value < 0 else _LEVEL_ATOM)
    if isinstance(e, NamedConstant):
        return e.name, _LEVEL_ATOM
    if isinstance(e, Variable):
        return e.name, _LEVEL_ATOM
    if isinstance(e, Sin):
        return f"sin({_fmt(e.operand, _LEVEL_SUM)})", _LEVEL_ATOM
    if isinstance(e, Cos):
        return f"cos({_fmt(e.operand, _LEVEL_SUM)})", _LEVEL_ATOM
    if isinstance(e, Exp):
        return f"exp({_fmt(e.operand, _LEVEL_SUM)})", _LEVEL_ATOM
    if isinstance(e, Negate):
        return f"-{_fmt(e.operand, _LEVEL_UNARY)}", _LEVEL_UNARY
    if isinstance(e, Add):
        return (
            f"{_fmt(e.left, _LEVEL_SUM)} + {_fmt(e.right, _LEVEL_TERM)}",
            _LEVEL_SUM,
        )
    if isinstance(e, Subtract):
        return (
            f"{_fmt(e.left, _LEVEL_SUM)} - {_fmt(e.right, _LEVEL_TERM)}",
            _LEVEL_SUM,
        )
    if isinstance(e, Multiply):
        return (
            f"{_fmt(e.left, _LEVEL_TERM)}*{_fmt(e.right, _LEVEL_UNARY)}",
            _LEVEL_TERM,
        )
    if isinstance(e, Divide):
        return (
            f"{_fmt(e.left, _LEVEL_TERM)}/{_fmt(e.right, _LEVEL_UNARY)}",
            _LEVEL_TERM,
        )
    if isinstance(e, IntPower):
        return f"{_fmt(e.base, _LEVEL_ATOM)}^{e.exponent}", _LEVEL_POWER
    raise ExprError(f"unknown node type {type(e).__name__}")


# ---------------------------------------------------------------------------
# parser

_TOKEN_RE = re.compile(
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)

_MAX_EXPONENT = 10**6


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    """Recursive descent over: sums < products < unary minus < ``^``.

    Binary operators associate left; ``^`` associates right and accepts
    only (optionally negated) integer literals as exponents.
    """

    def __init__(self, text: str, allowed_vars: Iterable[str]):
        self.tokens = _tokenize(text)
        self.vars = frozenset(allowed_vars)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected '{op}'", offset)
        return self.advance()

    def parse(self) -> ScalarExpr:
        e = self.parse_sum()
        kind, value, offset = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected trailing input {value!r}", offset)
        return e

    def parse_sum(self) -> ScalarExpr:
        e = self.parse_product()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.parse_product()
                e = Add(e, rhs) if value == "+" else Subtract(e, rhs)
            else:
                return e

    def parse_product(self) -> ScalarExpr:
        e = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.parse_unary()
                e = Multiply(e, rhs) if value == "*" else Divide(e, rhs)
            else:
                return e

    def parse_unary(self) -> ScalarExpr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            inner = self.parse_unary()
            if isinstance(inner, Constant):
                return Constant(-inner.value)
            return Negate(inner)
        return self.parse_power()

    def parse_power(self) -> ScalarExpr:
        base = self.parse_atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return IntPower(base, self.parse_exponent())
        return base

    def parse_exponent(self) -> int:
        sign = 1
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            sign = -1
            kind, value, offset = self.peek()
        if kind != "num":
            raise ExprSyntaxError("exponent must be an integer literal", offset)
        if "." in value or "e" in value or "E" in value:
            raise ExprSyntaxError("exponent must be an integer literal", offset)
        self.advance()
        k = sign * int(value)
        kind, value, offset = self.peek()
        if kind == "op" and value == "^":
            # right-associative tower of integer literals, folded to an int
            self.advance()
            k2 = self.parse_exponent()
            if k2 < 0:
                raise ExprSyntaxError("nested exponent must be non-negative", offset)
            if abs(k) > 1 and k2 > 20:
                raise ExprSyntaxError("exponent too large", offset)
            k = k**k2
        if abs(k) > _MAX_EXPONENT:
            raise ExprSyntaxError("exponent too large", offset)
        return k

    def parse_atom(self) -> ScalarExpr:
        kind, value, offset = self.advance()
        if kind == "num":
            return Constant(float(value))
        if kind == "ident":
            if value in FUNCTION_NAMES:
                self.expect_op("(")
                arg = self.parse_sum()
                self.expect_op(")")
                return {"sin": Sin, "cos": Cos, "exp": Exp}[value](arg)
            if value in NAMED_CONSTANT_VALUES:
                return NamedConstant(value)
            if value in self.vars:
                return Variable(value)
            raise UnknownIdentifierError(value, offset)
        if kind == "op" and value == "(":
            e = self.parse_sum()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(f"unexpected token {value!r}", offset)


def parse_scalar_expr(text: str, allowed_vars: Iterable[str]) -> ScalarExpr:
    """Parse ``text`` over the given variable names.

    Identifiers must be ``allowed_vars`` members, ``pi``, or one of the
    function names ``sin``/``cos``/``exp`` (which require parentheses).
    """
    return _Parser(text, allowed_vars).parse()


# ---------------------------------------------------------------------------
# simplification

_EXPAND_CAP = 400


class _Lin:
    """Linear combination: constant + sum of coefficient * factor-product.

    Keys of ``terms`` are sorted tuples of ``(base_expr, positive_exponent)``
    pairs; the base expressions are already in canonical form.
    """

    __slots__ = ("const", "terms")

    def __init__(self, const: float = 0.0, terms: dict | None = None):
        self.const = const
        self.terms = terms if terms is not None else {}

    def nterms(self) -> int:
        return len(self.terms) + (1 if self.const != 0.0 else 0)


def _order_key(e: ScalarExpr) -> str:
    return to_text(e)


def _term_add(terms: dict, key: tuple, coef: float) -> None:
    new = terms.get(key, 0.0) + coef
    if new == 0.0:
        terms.pop(key, None)
    else:
        terms[key] = new


def _lin_combine(a: _Lin, b: _Lin, sign: float) -> _Lin:
    terms = dict(a.terms)
    for key, coef in b.terms.items():
        _term_add(terms, key, sign * coef)
    return _Lin(a.const + sign * b.const, terms)


def _lin_scale(a: _Lin, c: float) -> _Lin:
    if c == 0.0:
        return _Lin()
    return _Lin(a.const * c, {k: v * c for k, v in a.terms.items()})


def _merge_factor_lists(fa: tuple, fb: tuple) -> tuple:
    bases: dict = {}
    for base, exp in fa + fb:
        bases[base] = bases.get(base, 0) + exp
    items = [(b, e) for b, e in bases.items() if e != 0]
    items.sort(key=lambda it: _order_key(it[0]))
    return tuple(items)


def _lin_mul(a: _Lin, b: _Lin) -> _Lin:
    if a.nterms() * b.nterms() > _EXPAND_CAP:
        # keep the product atomic rather than blowing up the expansion
        return _atom(Multiply(_rebuild(a), _rebuild(b)))
    out = _Lin()
    out.const = a.const * b.const
    if a.const != 0.0:
        for key, coef in b.terms.items():
            _term_add(out.terms, key, a.const * coef)
    if b.const != 0.0:
        for key, coef in a.terms.items():
            _term_add(out.terms, key, b.const * coef)
    for ka, ca in a.terms.items():
        for kb, cb in b.terms.items():
            _term_add(out.terms, _merge_factor_lists(ka, kb), ca * cb)
    return out


def _atom(e: ScalarExpr) -> _Lin:
    return _Lin(0.0, {((e, 1),): 1.0})


def _is_const(lin: _Lin) -> bool:
    return not lin.terms


def _linearize(e: ScalarExpr) -> _Lin:
    if isinstance(e, Constant):
        return _Lin(e.value)
    if isinstance(e, (NamedConstant, Variable)):
        return _atom(e)
    if isinstance(e, Negate):
        return _lin_scale(_linearize(e.operand), -1.0)
    if isinstance(e, Add):
        return _lin_combine(_linearize(e.left), _linearize(e.right), 1.0)
    if isinstance(e, Subtract):
        return _lin_combine(_linearize(e.left), _linearize(e.right), -1.0)
    if isinstance(e, Multiply):
        return _lin_mul(_linearize(e.left), _linearize(e.right))
    if isinstance(e, Divide):
        num = _linearize(e.left)
        den = _linearize(e.right)
        if _is_const(den) and den.const != 0.0:
            return _lin_scale(num, 1.0 / den.const)
        if _is_const(num) and num.const == 0.0:
            return _Lin()
        return _atom(Divide(_rebuild(num), _rebuild(den)))
    if isinstance(e, IntPower):
        base = _linearize(e.base)
        k = e.exponent
        if k == 0:
            return _Lin(1.0)
        if _is_const(base):
            if base.const == 0.0 and k < 0:
                return _atom(IntPower(ZERO, k))
            return _Lin(float(base.const**k))
        if k >= 1 and len(base.terms) == 1 and base.const == 0.0:
            ((key, coef),) = base.terms.items()
            if all(exp > 0 for _, exp in key):
                newkey = tuple((b, exp * k) for b, exp in key)
                return _Lin(0.0, {newkey: float(coef**k)})
        if k >= 2 and base.nterms() ** k <= _EXPAND_CAP:
            out = base
            for _ in range(k - 1):
                out = _lin_mul(out, base)
            return out
        return _Lin(0.0, {((_rebuild(base), k) if k > 0 else (IntPower(_rebuild(base), k), 1),): 1.0})
    if isinstance(e, _UNARY_FN):
        inner = _rebuild(_linearize(e.operand))
        if isinstance(inner, Constant):
            fn = {Sin: math.sin, Cos: math.cos, Exp: math.exp}[type(e)]
            try:
                v = fn(inner.value)
            except OverflowError:
                v = math.inf
            if math.isfinite(v):
                return _Lin(v)
        return _atom(type(e)(inner))
    raise ExprError(f"unknown node type {type(e).__name__}")


def _pythagorean(lin: _Lin) -> None:
    """Collapse matching ``c*sin(u)^2`` + ``c*cos(u)^2`` term pairs."""
    changed = True
    while changed:
        changed = False
        for key in list(lin.terms):
            if key not in lin.terms:
                continue
            coef = lin.terms[key]
            for slot, (base, exp) in enumerate(key):
                if exp != 2 or not isinstance(base, Sin):
                    continue
                partner_factor = (Cos(base.operand), 2)
                rest = key[:slot] + key[slot + 1 :]
                partner = tuple(
                    sorted(rest + (partner_factor,), key=lambda it: _order_key(it[0]))
                )
                if lin.terms.get(partner) == coef:
                    del lin.terms[key]
                    del lin.terms[partner]
                    if rest:
                        _term_add(lin.terms, rest, coef)
                    else:
                        lin.const += coef
                    changed = True
                    break


def _build_product(key: tuple) -> ScalarExpr:
    factors = []
    for base, exp in key:
        factors.append(base if exp == 1 else IntPower(base, exp))
    out = factors[0]
    for f in factors[1:]:
        out = Multiply(out, f)
    return out


def _rebuild(lin: _Lin) -> ScalarExpr:
    _pythagorean(lin)
    entries = []
    for key, coef in lin.terms.items():
        if coef == 0.0:
            continue
        product = _build_product(key)
        entries.append((_order_key(product), product, coef))
    entries.sort(key=lambda it: it[0])

    acc: ScalarExpr | None = None
    for _, product, coef in entries:
        mag = abs(coef)
        term = product if mag == 1.0 else Multiply(Constant(mag), product)
        if acc is None:
            acc = term if coef > 0 else Negate(term)
        else:
            acc = Add(acc, term) if coef > 0 else Subtract(acc, term)
    c = lin.const
    if acc is None:
        return Constant(c)
    if c > 0:
        acc = Add(acc, Constant(c))
    elif c < 0:
        acc = Subtract(acc, Constant(-c))
    return acc


def simplify(e: ScalarExpr) -> ScalarExpr:
    """Normalize to a canonical, numerically-equivalent form (idempotent)."""
    return _rebuild(_linearize(e))


# ---------------------------------------------------------------------------
# compiled stack programs for batch evaluation


@dataclass(frozen=True)
class Program:
    ops: np.ndarray
    iargs: np.ndarray  # variable indices and power exponents
    fargs: np.ndarray  # constant values
    stack_depth: int
    var_order: tuple[str, ...]


def _emit(
    e: ScalarExpr, var_index: Mapping[str, int], ops: list, iargs: list, fargs: list
) -> int:
    """Append postfix code; returns the stack depth needed by this subtree."""
    if isinstance(e, Constant):
        ops.append(_kernels.OP_CONST)
        iargs.append(0)
        fargs.append(e.value)
        return 1
    if isinstance(e, NamedConstant):
        ops.append(_kernels.OP_CONST)
        iargs.append(0)
        fargs.append(NAMED_CONSTANT_VALUES[e.name])
        return 1
    if isinstance(e, Variable):
        if e.name not in var_index:
            raise ExprError(f"variable '{e.name}' not in the evaluation order")
        ops.append(_kernels.OP_VAR)
        iargs.append(var_index[e.name])
        fargs.append(0.0)
        return 1
    if isinstance(e, _BINARY):
        dl = _emit(e.left, var_index, ops, iargs, fargs)
        dr = _emit(e.right, var_index, ops, iargs, fargs)
        op = {
            Add: _kernels.OP_ADD,
            Subtract: _kernels.OP_SUB,
            Multiply: _kernels.OP_MUL,
            Divide: _kernels.OP_DIV,
        }[type(e)]
        ops.append(op)
        iargs.append(0)
        fargs.append(0.0)
        return max(dl, dr + 1)
    if isinstance(e, Negate):
        d = _emit(e.operand, var_index, ops, iargs, fargs)
        ops.append(_kernels.OP_NEG)
        iargs.append(0)
        fargs.append(0.0)
        return d
    if isinstance(e, IntPower):
        d = _emit(e.base, var_index, ops, iargs, fargs)
        ops.append(_kernels.OP_POWI)
        iargs.append(e.exponent)
        fargs.append(0.0)
        return d
    if isinstance(e, _UNARY_FN):
        d = _emit(e.operand, var_index, ops, iargs, fargs)
        op = {Sin: _kernels.OP_SIN, Cos: _kernels.OP_COS, Exp: _kernels.OP_EXP}[type(e)]
        ops.append(op)
        iargs.append(0)
        fargs.append(0.0)
        return d
    raise ExprError(f"unknown node type {type(e).__name__}")


@lru_cache(maxsize=8192)
def compile_program(e: ScalarExpr, var_order: tuple[str, ...]) -> Program:
    """Flatten to a postfix stack program over the given variable order."""
    index = {name: i for i, name in enumerate(var_order)}
    ops: list[int] = []
    iargs: list[int] = []
    fargs: list[float] = []
    depth = _emit(e, index, ops, iargs, fargs)
    return Program(
        ops=np.asarray(ops, dtype=np.int64),
        iargs=np.asarray(iargs, dtype=np.int64),
        fargs=np.asarray(fargs, dtype=np.float64),
        stack_depth=depth,
        var_order=var_order,
    )


def evaluate_many(
    e: ScalarExpr,
    var_order: tuple[str, ...],
    points: np.ndarray,
    backend: str | None = None,
) -> np.ndarray:
    """Evaluate at every row of ``points`` (columns follow ``var_order``)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != len(var_order):
        raise ExprError(
            f"points must have shape (n, {len(var_order)}), got {pts.shape}"
        )
    prog = compile_program(e, tuple(var_order))
    return _kernels.run_program(
        prog.ops, prog.iargs, prog.fargs, prog.stack_depth, pts, backend
    )
