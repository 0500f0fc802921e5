"""Closed-form scalar expressions over ``x1..xN``.

Coefficient functions of the operator are written as text, parsed into an
immutable tree, differentiated symbolically and evaluated with numpy.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | 'x' digits | func '(' expr ')' | '(' expr ')'
    func   := 'exp' | 'log' | 'sin' | 'cos'

Integer literals and ``p/q`` ratios of integers stay exact (``Fraction``);
decimal literals become IEEE doubles.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Union

import numpy as np

Number = Union[Fraction, float]

FUNCTIONS = ("exp", "log", "sin", "cos")


class ExprError(ValueError):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text: str | None = None


class ExprDomainError(ExprError, ArithmeticError):
    pass


class ExprOverflowError(ExprError, OverflowError):
    pass


# --------------------------------------------------------------------------
# nodes


class Expr:
    """Base node. Subclasses are frozen dataclasses, so equality is structural."""

    _rank = 99

    @cached_property
    def sort_key(self) -> tuple[int, str]:
        return (self._rank, str(self))

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), -1))

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)

    @property
    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: Number
    _rank = 0

    def __str__(self):
        v = self.value
        if isinstance(v, Fraction):
            text = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
            if v < 0 or v.denominator != 1:
                return f"({text})"
            return text
        text = repr(float(v))
        if "inf" in text or "nan" in text:
            raise ExprError(f"non-finite constant {text}")
        return f"({text})" if v < 0 else text


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int  # 1-based
    _rank = 1

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr
    _rank = 2

    def __str__(self):
        return f"{self.name}({self.arg})"


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int
    _rank = 3

    def __str__(self):
        b = str(self.base)
        if isinstance(self.base, (Add, Mul, Neg, Pow)):
            b = f"({b})"
        e = str(self.exponent) if self.exponent >= 0 else f"({self.exponent})"
        return f"{b}^{e}"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    _rank = 4

    def __str__(self):
        a = str(self.arg)
        if isinstance(self.arg, (Add, Mul, Neg)):
            a = f"({a})"
        return f"-{a}"


@dataclass(frozen=True, eq=True)
class Add(Expr):
    children: tuple[Expr, ...]
    _rank = 5

    def __str__(self):
        parts = []
        for c in self.children:
            s = str(c)
            parts.append(f"({s})" if isinstance(c, Neg) else s)
        return " + ".join(parts)


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    children: tuple[Expr, ...]
    _rank = 6

    def __str__(self):
        parts = []
        for c in self.children:
            s = str(c)
            parts.append(f"({s})" if isinstance(c, (Add, Neg)) else s)
        return "*".join(parts)


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    if isinstance(value, float):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


# --------------------------------------------------------------------------
# smart constructors: flatten, fold constants, order children canonically


def _fold(a: Number, b: Number, op) -> Number:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return op(a, b)
    return float(op(float(a), float(b)))


def add(*terms: Expr) -> Expr:
    const: Number = Fraction(0)
    rest: list[Expr] = []
    for t in terms:
        parts = t.children if isinstance(t, Add) else (t,)
        for p in parts:
            if isinstance(p, Const):
                const = _fold(const, p.value, lambda u, v: u + v)
            else:
                rest.append(p)
    if const != 0 or not rest:
        rest.append(Const(const))
    if len(rest) == 1:
        return rest[0]
    return Add(tuple(sorted(rest, key=lambda e: e.sort_key)))


def mul(*factors: Expr) -> Expr:
    const: Number = Fraction(1)
    rest: list[Expr] = []
    stack = list(reversed(factors))
    while stack:
        p = stack.pop()
        if isinstance(p, Mul):
            stack.extend(reversed(p.children))
        elif isinstance(p, Neg):
            const = _fold(const, Fraction(-1), lambda u, v: u * v)
            stack.append(p.arg)
        elif isinstance(p, Const):
            const = _fold(const, p.value, lambda u, v: u * v)
        else:
            rest.append(p)
    if const == 0 or not rest:
        return Const(const)
    if const != 1:
        rest.append(Const(const))
    if len(rest) == 1:
        return rest[0]
    return Mul(tuple(sorted(rest, key=lambda e: e.sort_key)))


def neg(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(-e.value)
    if isinstance(e, Neg):
        return e.arg
    if isinstance(e, Mul) and isinstance(e.children[0], Const):
        return mul(Const(-e.children[0].value), *e.children[1:])
    return Neg(e)


def power(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        v = base.value
        if v == 0 and n < 0:
            raise ExprDomainError("division by zero in constant power")
        if isinstance(v, Fraction):
            return Const(v**n)
        return Const(float(v) ** n)
    if isinstance(base, Pow):
        return power(base.base, base.exponent * n)
    return Pow(base, int(n))


def func(name: str, arg: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    if isinstance(arg, Const) and arg.value == 0:
        if name in ("exp", "cos"):
            return ONE
        if name == "sin":
            return ZERO
    return Func(name, arg)


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)"
    r"|(?P<var>x\d+)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise ExprSyntaxError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            raise self.error(f"expected {value!r}", tok)

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else add(e, neg(rhs))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            tok = self.peek()
            rhs = self.unary()
            if op == "*":
                e = mul(e, rhs)
            else:
                if rhs.is_zero:
                    raise self.error("division by zero", tok)
                e = mul(e, power(rhs, -1))
        return e

    def unary(self):
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return neg(self.unary())
        return self.pow()

    def pow(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            ex = self.unary()
            if not isinstance(ex, Const) or float(ex.value) != int(float(ex.value)):
                raise self.error("exponent must be an integer constant", tok)
            n = int(ex.value)
            if n < 0 and base.is_zero:
                raise self.error("division by zero", tok)
            return power(base, n)
        return base

    def atom(self):
        kind, value, start = self.take()
        if kind == "num":
            if re.fullmatch(r"\d+", value):
                return Const(Fraction(int(value)))
            return Const(float(value))
        if kind == "var":
            idx = int(value[1:])
            if not 1 <= idx <= self.dim:
                raise ExprSyntaxError(
                    f"variable {value} out of range for dimension {self.dim}", _byte_offset(self.text, start)
                )
            return Var(idx)
        if kind == "name":
            if value not in FUNCTIONS:
                raise ExprSyntaxError(f"unknown function {value!r}", _byte_offset(self.text, start))
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return func(value, arg)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", _byte_offset(self.text, start))
        raise ExprSyntaxError(f"unexpected token {value!r}", _byte_offset(self.text, start))


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def parse(text: str, dim: int) -> Expr:
    """Parse ``text`` into an :class:`Expr` over ``x1..x{dim}``.

    Raises :class:`ExprSyntaxError` (with ``.offset`` in bytes) on malformed
    input or a variable index larger than ``dim``.
    """
    if dim < 1:
        raise ValueError("dimension must be positive")
    try:
        return _Parser(text, dim).parse()
    except ExprSyntaxError as exc:
        exc.text = text
        raise


# --------------------------------------------------------------------------
# calculus


def diff(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to ``x{i}``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, i))
    if isinstance(e, Add):
        return add(*(diff(c, i) for c in e.children))
    if isinstance(e, Mul):
        terms = []
        for k, c in enumerate(e.children):
            dc = diff(c, i)
            if dc.is_zero:
                continue
            terms.append(mul(*e.children[:k], dc, *e.children[k + 1 :]))
        return add(*terms) if terms else ZERO
    if isinstance(e, Pow):
        db = diff(e.base, i)
        if db.is_zero:
            return ZERO
        return mul(Const(Fraction(e.exponent)), power(e.base, e.exponent - 1), db)
    if isinstance(e, Func):
        da = diff(e.arg, i)
        if da.is_zero:
            return ZERO
        if e.name == "exp":
            return mul(e, da)
        if e.name == "log":
            return mul(da, power(e.arg, -1))
        if e.name == "sin":
            return mul(func("cos", e.arg), da)
        if e.name == "cos":
            return neg(mul(func("sin", e.arg), da))
    raise TypeError(f"unknown node {e!r}")


def diff_multi(e: Expr, beta: tuple[int, ...]) -> Expr:
    """``∂^beta e`` for a multi-index ``beta`` (0-based axis positions)."""
    for axis, order in enumerate(beta):
        for _ in range(order):
            e = diff(e, axis + 1)
    return e


def variables(e: Expr) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Neg, Func)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    out: set[int] = set()
    for c in e.children:
        out |= variables(c)
    return out


# --------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, point) -> np.ndarray | float:
    """Evaluate at ``point``: shape ``(N,)`` or a batch ``(..., N)``.

    Returns a float for a single point, otherwise an array of shape ``(...)``.
    Logarithms of non-positive values and negative powers of zero raise
    :class:`ExprDomainError`; overflow raises :class:`ExprOverflowError`.
    """
    p = np.asarray(point, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    coords = np.moveaxis(p, -1, 0)
    with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
        try:
            out = _eval(e, coords)
        except FloatingPointError as exc:
            msg = str(exc)
            if "overflow" in msg:
                raise ExprOverflowError(f"overflow evaluating {e}") from exc
            raise ExprDomainError(f"invalid value evaluating {e}: {msg}") from exc
    out = np.broadcast_to(np.asarray(out, dtype=float), coords.shape[1:])
    if out.ndim == 0:
        return float(out)
    return np.array(out)


def _eval(e: Expr, coords):
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        if e.index > coords.shape[0]:
            raise ExprDomainError(f"point has no coordinate x{e.index}")
        return coords[e.index - 1]
    if isinstance(e, Neg):
        return -_eval(e.arg, coords)
    if isinstance(e, Add):
        acc = 0.0
        for c in e.children:
            acc = acc + _eval(c, coords)
        return acc
    if isinstance(e, Mul):
        acc = 1.0
        for c in e.children:
            acc = acc * _eval(c, coords)
        return acc
    if isinstance(e, Pow):
        b = _eval(e.base, coords)
        if e.exponent < 0 and np.any(np.asarray(b) == 0):
            raise ExprDomainError(f"division by zero in {e}")
        return np.power(b, float(e.exponent)) if e.exponent < 0 else b ** e.exponent
    if isinstance(e, Func):
        a = _eval(e.arg, coords)
        if e.name == "exp":
            return np.exp(a)
        if e.name == "log":
            if np.any(np.asarray(a) <= 0):
                raise ExprDomainError(f"log of non-positive value in {e}")
            return np.log(a)
        if e.name == "sin":
            return np.sin(a)
        if e.name == "cos":
            return np.cos(a)
    raise TypeError(f"unknown node {e!r}")


@dataclass(frozen=True)
class Point:
    coords: tuple[float, ...]
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", len(self.coords))
        if self.dim < 1:
            raise ValueError("a point needs at least one coordinate")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)
