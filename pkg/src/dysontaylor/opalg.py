"""Differential operators with polynomial coefficients in ``w = x - z``.

A :class:`DiffOp` is a finite sum ``Σ c_{β,γ} w^β ∂^γ`` kept in normal form
(multiplications left of derivatives). Coefficients ``c`` live in
:class:`ScalarCoef`, a sparse polynomial ring with exact rational
coefficients over formal :class:`Atom` symbols such as ``D^β a_ij`` (the value
of a coefficient derivative at the center ``z``) or simplex variables ``σ_i``.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import product
from math import comb, factorial
from typing import Iterable, Mapping, NamedTuple

import numpy as np

MultiIdx = tuple[int, ...]
Monomial = tuple[tuple["Atom", int], ...]


class Atom(NamedTuple):
    """Formal scalar symbol.

    ``kind`` is ``"a"``, ``"b"``, ``"c"`` for coefficient derivatives at the
    center (``index`` = ``(i, j)``, ``(k,)`` or ``()``, 0-based; ``deriv`` = β),
    ``"sigma"`` for a simplex variable (``index = (i,)``, 1-based), or any other
    tag for free symbols used in tests.
    """

    kind: str
    index: tuple[int, ...] = ()
    deriv: tuple[int, ...] = ()

    def __str__(self):
        if self.kind == "sigma":
            return f"s{self.index[0]}"
        idx = "".join(str(i + 1) for i in self.index)
        name = f"{self.kind}{idx}"
        if any(self.deriv):
            return f"D{list(self.deriv)}{name}".replace(" ", "")
        return name


def coef_atom(kind: str, index: tuple[int, ...], deriv: tuple[int, ...]) -> Atom:
    if kind == "a":
        i, j = index
        index = (min(i, j), max(i, j))
    return Atom(kind, tuple(index), tuple(deriv))


def sigma(i: int) -> Atom:
    return Atom("sigma", (i,), ())


# --------------------------------------------------------------------------


def _mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for a, e in m2:
        d[a] = d.get(a, 0) + e
    return tuple(sorted(d.items()))


class ScalarCoef:
    """Sparse polynomial over :class:`Atom` symbols with ``Fraction`` coefficients."""

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None):
        self.terms: dict[Monomial, Fraction] = {m: c for m, c in (terms or {}).items() if c != 0}
        self._hash = None

    @classmethod
    def const(cls, value) -> "ScalarCoef":
        return cls({(): Fraction(value)})

    @classmethod
    def atom(cls, a: Atom, power: int = 1) -> "ScalarCoef":
        return cls({((a, power),): Fraction(1)}) if power else cls.const(1)

    @staticmethod
    def coerce(value) -> "ScalarCoef":
        if isinstance(value, ScalarCoef):
            return value
        if isinstance(value, Atom):
            return ScalarCoef.atom(value)
        if isinstance(value, (int, Fraction)):
            return ScalarCoef.const(value)
        raise TypeError(f"cannot use {type(value).__name__} as an exact coefficient")

    def is_zero(self) -> bool:
        return not self.terms

    def is_const(self) -> bool:
        return all(m == () for m in self.terms)

    def const_value(self) -> Fraction:
        return self.terms.get((), Fraction(0))

    def atoms(self) -> set[Atom]:
        return {a for m in self.terms for a, _ in m}

    def __add__(self, other):
        other = ScalarCoef.coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return ScalarCoef(out)

    __radd__ = __add__

    def __neg__(self):
        return ScalarCoef({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-ScalarCoef.coerce(other))

    def __rsub__(self, other):
        return ScalarCoef.coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            if other == 0:
                return ScalarCoef()
            return ScalarCoef({m: c * other for m, c in self.terms.items()})
        other = ScalarCoef.coerce(other)
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return ScalarCoef(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = ScalarCoef.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, (int, Fraction, Atom)):
            other = ScalarCoef.coerce(other)
        if not isinstance(other, ScalarCoef):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    def substitute(self, values: Mapping[Atom, "ScalarCoef | Fraction | int"]) -> "ScalarCoef":
        """Replace some atoms by exact values or other polynomials."""
        out = ScalarCoef()
        for m, c in self.terms.items():
            term = ScalarCoef.const(c)
            rest = []
            for a, e in m:
                if a in values:
                    term = term * (ScalarCoef.coerce(values[a]) ** e)
                else:
                    rest.append((a, e))
            out = out + term * ScalarCoef({tuple(rest): Fraction(1)})
        return out

    def evaluate(self, values: Mapping[Atom, float | np.ndarray]):
        """Numeric value; ``values`` may hold arrays (vectorized over centers)."""
        acc = 0.0
        for m, c in self.terms.items():
            t = float(c)
            for a, e in m:
                t = t * values[a] ** e
            acc = acc + t
        return acc

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for m in sorted(self.terms, key=lambda mono: (len(mono), mono)):
            c = self.terms[m]
            factors = [str(a) if e == 1 else f"{a}^{e}" for a, e in m]
            if c != 1 or not factors:
                factors.insert(0, str(c) if c.denominator == 1 else f"({c})")
            parts.append("*".join(factors))
        return " + ".join(parts)

    def __repr__(self):
        return f"ScalarCoef({self})"


# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _leibniz(beta2: MultiIdx, gamma1: MultiIdx) -> tuple[tuple[MultiIdx, int], ...]:
    """``(κ, weight)`` pairs for ``∂^γ1 ∘ w^β2 = Σ_κ weight · w^{β2-κ} ∂^{γ1-κ}``."""
    ranges = [range(min(g, b) + 1) for g, b in zip(gamma1, beta2)]
    out = []
    for kappa in product(*ranges):
        w = 1
        for g, b, k in zip(gamma1, beta2, kappa):
            w *= comb(g, k) * factorial(b) // factorial(b - k)
        out.append((kappa, w))
    return tuple(out)


class DiffOp:
    """``Σ c_{β,γ} (x-z)^β ∂^γ`` in normal form; immutable after construction."""

    __slots__ = ("dim", "terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[tuple[MultiIdx, MultiIdx], ScalarCoef] | None = None):
        self.dim = dim
        clean = {}
        for (beta, gamma), c in (terms or {}).items():
            if len(beta) != dim or len(gamma) != dim:
                raise ValueError(f"multi-index length does not match dimension {dim}")
            if min(beta + gamma, default=0) < 0:
                raise ValueError("negative multi-index entry")
            c = ScalarCoef.coerce(c)
            if not c.is_zero():
                clean[(tuple(beta), tuple(gamma))] = c
        self.terms: dict[tuple[MultiIdx, MultiIdx], ScalarCoef] = clean
        self._hash = None

    # constructors ---------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "DiffOp":
        return cls(dim)

    @classmethod
    def identity(cls, dim: int) -> "DiffOp":
        z = (0,) * dim
        return cls(dim, {(z, z): ScalarCoef.const(1)})

    @classmethod
    def monomial(cls, beta: Iterable[int], gamma: Iterable[int], coef=1) -> "DiffOp":
        beta, gamma = tuple(beta), tuple(gamma)
        return cls(len(beta), {(beta, gamma): ScalarCoef.coerce(coef)})

    # ring structure -------------------------------------------------------

    def _check(self, other: "DiffOp"):
        if not isinstance(other, DiffOp):
            raise TypeError(f"expected DiffOp, got {type(other).__name__}")
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "DiffOp") -> "DiffOp":
        self._check(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return DiffOp(self.dim, out)

    def __neg__(self):
        return DiffOp(self.dim, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s) -> "DiffOp":
        s = ScalarCoef.coerce(s)
        return DiffOp(self.dim, {k: c * s for k, c in self.terms.items()})

    def __matmul__(self, other: "DiffOp") -> "DiffOp":
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self.dim == other.dim and self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self.terms.items())))
        return self._hash

    def is_zero(self) -> bool:
        return not self.terms

    def map_coefs(self, fn) -> "DiffOp":
        return DiffOp(self.dim, {k: fn(c) for k, c in self.terms.items()})

    def atoms(self) -> set[Atom]:
        out: set[Atom] = set()
        for c in self.terms.values():
            out |= c.atoms()
        return out

    # printing -------------------------------------------------------------

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: kv[0])

    def pretty(self) -> str:
        """One line per term: ``coef * (x-z)^beta * D^gamma``, lexicographic in (β, γ)."""
        if not self.terms:
            return "0"
        lines = [f"{c} * (x-z)^{list(b)} * D^{list(g)}" for (b, g), c in self.sorted_terms()]
        return "\n".join(lines)

    def to_json_terms(self) -> list[dict]:
        return [{"beta": list(b), "gamma": list(g), "coef": str(c)} for (b, g), c in self.sorted_terms()]

    def __str__(self):
        return self.pretty()

    def __repr__(self):
        return f"DiffOp(dim={self.dim}, terms={len(self.terms)})"


def _compose_into(acc: dict, A: DiffOp, B: DiffOp, sign: int, skip_plain: bool = False) -> None:
    """Add ``sign · A∘B`` to ``acc``, a map ``(β, γ) -> {monomial: Fraction}``.

    ``skip_plain`` drops the ``κ = 0`` Leibniz terms, i.e. adds ``A∘B - B∘A``
    when ``A`` has coefficients constant in ``w``.
    """
    for (b1, g1), c1 in A.terms.items():
        for (b2, g2), c2 in B.terms.items():
            prod: dict = {}
            for m1, v1 in c1.terms.items():
                for m2, v2 in c2.terms.items():
                    m = _mono_mul(m1, m2)
                    prod[m] = prod.get(m, 0) + sign * v1 * v2
            for kappa, w in _leibniz(b2, g1):
                if skip_plain and not any(kappa):
                    continue
                beta = tuple(x + y - k for x, y, k in zip(b1, b2, kappa))
                gamma = tuple(x + y - k for x, y, k in zip(g1, g2, kappa))
                target = acc.setdefault((beta, gamma), {})
                for m, v in prod.items():
                    target[m] = target.get(m, 0) + w * v


def _from_acc(dim: int, acc: dict) -> DiffOp:
    return DiffOp(dim, {k: ScalarCoef(v) for k, v in acc.items()})


def compose(A: DiffOp, B: DiffOp) -> DiffOp:
    """``A ∘ B`` brought back to normal form by the Leibniz rule."""
    A._check(B)
    acc: dict = {}
    _compose_into(acc, A, B, 1)
    return _from_acc(A.dim, acc)


def commutator(A: DiffOp, B: DiffOp) -> DiffOp:
    """``[A, B] = A∘B - B∘A``."""
    A._check(B)
    acc: dict = {}
    _compose_into(acc, A, B, 1)
    _compose_into(acc, B, A, -1)
    return _from_acc(A.dim, acc)


def degree_order(A: DiffOp) -> tuple[int, int]:
    """Smallest ``(a, b)`` with ``A ∈ D(a, b)``; ``(-1, -1)`` for the zero operator."""
    if not A.terms:
        return (-1, -1)
    a = max(sum(beta) for beta, _ in A.terms)
    b = max(sum(gamma) for _, gamma in A.terms)
    return (a, b)


def ad_power(L0: DiffOp, Lm: DiffOp, k: int) -> DiffOp:
    """``ad^k_{L0}(Lm)``; ``L0`` must have constant coefficients in ``w``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if degree_order(L0)[0] > 0:
        raise ValueError("L0 must have constant coefficients (polynomial degree 0)")
    out = Lm
    for _ in range(k):
        if out.is_zero():
            break
        # with w-constant L0 the κ = 0 Leibniz terms of L0∘B are exactly B∘L0
        acc: dict = {}
        _compose_into(acc, L0, out, 1, skip_plain=True)
        out = _from_acc(L0.dim, acc)
    return out
