"""Taylor terms of the dilated operator and the Dyson-series operators.

For a center ``z`` and dilation ``s``, the operator ``L`` with coefficients
frozen along ``z + s(x - z)`` expands as ``Σ_m s^m L_m`` where ``L_m`` has
polynomial coefficients in ``w = x - z``. Every Dyson term of order ``s^ℓ``
reduces to a differential operator ``P_α`` acting on the heat kernel of
``L_0``; this module builds those operators exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, combinations_with_replacement
from math import factorial
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import Expr, add, as_expr, diff_multi, evaluate, mul, parse
from .opalg import Atom, DiffOp, ScalarCoef, ad_power, coef_atom, compose, degree_order, sigma


class EllipticityError(ArithmeticError):
    """Diffusion matrix fails the uniform ellipticity bound."""


@dataclass(frozen=True)
class OperatorSpec:
    """``L = Σ a_ij ∂_i∂_j + Σ b_k ∂_k + c`` with expression coefficients.

    ``a`` is symmetrized on construction. ``gamma`` is the declared
    ellipticity constant, checked on demand with :meth:`check_ellipticity`.
    """

    dim: int
    a: tuple[tuple[Expr, ...], ...]
    b: tuple[Expr, ...]
    c: Expr
    gamma: float

    def __post_init__(self):
        n = self.dim
        if n < 1:
            raise ValueError("dimension must be positive")
        if len(self.a) != n or any(len(row) != n for row in self.a):
            raise ValueError(f"a must be a {n}x{n} matrix")
        if len(self.b) != n:
            raise ValueError(f"b must have {n} entries")
        if not self.gamma > 0:
            raise ValueError("ellipticity constant gamma must be positive")
        sym = tuple(
            tuple(
                self.a[i][j] if self.a[i][j] == self.a[j][i] else mul(as_expr(Fraction(1, 2)), add(self.a[i][j], self.a[j][i]))
                for j in range(n)
            )
            for i in range(n)
        )
        object.__setattr__(self, "a", sym)

    @classmethod
    def from_strings(cls, a, b=None, c="0", gamma=1.0, dim=None) -> "OperatorSpec":
        if isinstance(a, str):
            a = [[a]]
        n = dim or len(a)
        b = b if b is not None else ["0"] * n
        return cls(
            dim=n,
            a=tuple(tuple(parse(str(e), n) for e in row) for row in a),
            b=tuple(parse(str(e), n) for e in b),
            c=parse(str(c), n),
            gamma=float(gamma),
        )

    @classmethod
    def from_json(cls, doc: Mapping) -> "OperatorSpec":
        """``{"dim": N, "a": [[expr,..],..], "b": [expr,..], "c": expr, "gamma": number}``."""
        n = int(doc["dim"])
        return cls.from_strings(doc["a"], doc.get("b"), doc.get("c", "0"), doc["gamma"], dim=n)

    @classmethod
    def load(cls, path) -> "OperatorSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "a": [[str(e) for e in row] for row in self.a],
            "b": [str(e) for e in self.b],
            "c": str(self.c),
            "gamma": self.gamma,
        }

    # coefficient access ---------------------------------------------------

    def base_expr(self, atom: Atom) -> Expr:
        if atom.kind == "a":
            i, j = atom.index
            return self.a[i][j]
        if atom.kind == "b":
            return self.b[atom.index[0]]
        if atom.kind == "c":
            return self.c
        raise KeyError(f"{atom} is not a coefficient atom")

    def derivative(self, atom: Atom) -> Expr:
        return _derivative(self, atom)

    def atom_values(self, atoms: Iterable[Atom], z) -> dict[Atom, np.ndarray | float]:
        """Evaluate coefficient-derivative atoms at centers ``z`` (shape ``(N,)`` or ``(M, N)``)."""
        return {a: evaluate(self.derivative(a), z) for a in atoms}

    def diffusion_matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        out = np.empty(batch + (self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[..., i, j] = evaluate(self.a[i][j], x)
        return out

    def check_ellipticity(self, x, tol: float = 1e-12) -> float:
        """Smallest eigenvalue of ``A`` over the points; raises if below ``gamma``."""
        A = self.diffusion_matrix(np.atleast_2d(np.asarray(x, dtype=float)))
        lam = float(np.min(np.linalg.eigvalsh(A)))
        if lam < self.gamma - tol:
            raise EllipticityError(f"smallest eigenvalue {lam:.6g} of A is below gamma={self.gamma}")
        return lam


@lru_cache(maxsize=None)
def _derivative(spec: OperatorSpec, atom: Atom) -> Expr:
    return diff_multi(spec.base_expr(atom), atom.deriv)


# --------------------------------------------------------------------------
# Taylor terms


def multi_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    """All ``β ∈ N^dim`` with ``|β| = order``, lexicographically."""
    if order < 0:
        return []
    out = []
    for combo in combinations_with_replacement(range(dim), order):
        beta = [0] * dim
        for axis in combo:
            beta[axis] += 1
        out.append(tuple(beta))
    return sorted(out, reverse=True)


def _mfact(beta) -> int:
    out = 1
    for b in beta:
        out *= factorial(b)
    return out


def _unit(dim, *axes) -> tuple[int, ...]:
    g = [0] * dim
    for ax in axes:
        g[ax] += 1
    return tuple(g)


@lru_cache(maxsize=None)
def taylor_term(spec: OperatorSpec, m: int) -> DiffOp:
    """Coefficient of ``s^m`` in the dilated operator, atoms left symbolic.

    ``L_m = Σ_{|β|=m} D^β a_ij/β! w^β ∂_i∂_j + Σ_{|β|=m-1} D^β b_k/β! w^β ∂_k
    + Σ_{|β|=m-2} D^β c/β! w^β``. Atoms whose derivative is identically zero
    are dropped.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    n = spec.dim
    terms: dict = {}

    def put(beta, gamma, atom, weight):
        if spec.derivative(atom).is_zero:
            return
        c = ScalarCoef.atom(atom) * Fraction(weight, _mfact(beta))
        key = (beta, gamma)
        terms[key] = terms[key] + c if key in terms else c

    for beta in multi_indices(n, m):
        for i in range(n):
            for j in range(i, n):
                put(beta, _unit(n, i, j), coef_atom("a", (i, j), beta), 1 if i == j else 2)
    for beta in multi_indices(n, m - 1):
        for k in range(n):
            put(beta, _unit(n, k), coef_atom("b", (k,), beta), 1)
    for beta in multi_indices(n, m - 2):
        put(beta, (0,) * n, coef_atom("c", (), beta), 1)
    return DiffOp(n, terms)


# --------------------------------------------------------------------------
# multi-indices


def enumerate_indices(ell: int) -> list[tuple[int, ...]]:
    """All compositions of ``ell`` into positive parts, by length then lexicographically.

    There are ``2^(ell-1)`` of them.
    """
    if ell < 1:
        raise ValueError("ell must be positive")
    out = []
    for k in range(1, ell + 1):
        group = []
        for cuts in combinations(range(1, ell), k - 1):
            bounds = (0,) + cuts + (ell,)
            group.append(tuple(bounds[i + 1] - bounds[i] for i in range(k)))
        out.extend(sorted(group))
    return out


# --------------------------------------------------------------------------
# simplex polynomials


class SigmaPoly:
    """Polynomial in ``σ_1..σ_k`` with exact rational coefficients."""

    __slots__ = ("k", "terms")

    def __init__(self, k: int, terms: Mapping[tuple[int, ...], Fraction] | None = None):
        self.k = k
        self.terms = {}
        for e, c in (terms or {}).items():
            e = tuple(e)
            if len(e) != k or min(e, default=0) < 0:
                raise ValueError(f"exponent vector {e} invalid for k={k}")
            if c != 0:
                self.terms[e] = self.terms.get(e, 0) + Fraction(c)
        self.terms = {e: c for e, c in self.terms.items() if c != 0}

    @classmethod
    def monomial(cls, exps: Sequence[int], coef=1) -> "SigmaPoly":
        return cls(len(exps), {tuple(exps): Fraction(coef)})

    def __add__(self, other: "SigmaPoly") -> "SigmaPoly":
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return SigmaPoly(self.k, out)

    def __mul__(self, other) -> "SigmaPoly":
        if isinstance(other, (int, Fraction)):
            return SigmaPoly(self.k, {e: c * other for e, c in self.terms.items()})
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return SigmaPoly(self.k, out)

    def __eq__(self, other):
        return isinstance(other, SigmaPoly) and self.k == other.k and self.terms == other.terms

    def __call__(self, sig) -> float:
        sig = np.asarray(sig, dtype=float)
        acc = 0.0
        for e, c in self.terms.items():
            acc = acc + float(c) * np.prod(sig ** np.asarray(e), axis=-1)
        return acc


@lru_cache(maxsize=None)
def simplex_moment(exps: tuple[int, ...]) -> Fraction:
    """``∫ σ^exps`` over ``1 ≥ σ_1 ≥ … ≥ σ_k ≥ 0``, integrating innermost first."""
    value = Fraction(1)
    carry = 0
    for e in reversed(exps):
        carry += e + 1
        value /= carry
    return value


def simplex_integrate(p: SigmaPoly, k: int | None = None) -> Fraction:
    """Exact integral of ``p`` over the ordered unit simplex of dimension ``k``."""
    k = p.k if k is None else k
    if k != p.k:
        raise ValueError(f"polynomial has {p.k} simplex variables, expected {k}")
    return sum((c * simplex_moment(e) for e, c in p.terms.items()), Fraction(0))


def integrate_sigma(coef: ScalarCoef, k: int) -> ScalarCoef:
    """Integrate the ``σ``-dependence of a mixed coefficient over ``Σ_k``."""
    out: dict = {}
    for mono, c in coef.terms.items():
        exps = [0] * k
        rest = []
        for atom, e in mono:
            if atom.kind == "sigma":
                exps[atom.index[0] - 1] = e
            else:
                rest.append((atom, e))
        key = tuple(rest)
        out[key] = out.get(key, 0) + c * simplex_moment(tuple(exps))
    return ScalarCoef(out)


# --------------------------------------------------------------------------
# BCH polynomials and Dyson operators


def bch_polynomial(L0: DiffOp, Lm: DiffOp, m: int) -> list[DiffOp]:
    """Coefficients ``[ad^k_{L0}(Lm)/k!  for k = 0..m]`` of ``P_m(θ)`` in powers of ``θ``.

    ``e^{θ L0} Lm = P_m(θ) e^{θ L0}`` with ``P_m(θ) = Σ_k θ^k/k! ad^k_{L0}(Lm)``.
    """
    a0, b0 = degree_order(L0)
    if a0 > 0 or b0 > 2:
        raise ValueError(f"L0 must lie in D(0,2), got degree/order ({a0},{b0})")
    am, bm = degree_order(Lm)
    if am > m or bm > 2:
        raise ValueError(f"Lm must lie in D({m},2), got degree/order ({am},{bm})")
    out = []
    for k in range(m + 1):
        out.append(ad_power(L0, Lm, k).scale(Fraction(1, factorial(k))))
    return out


@lru_cache(maxsize=None)
def _bch_terms(spec: OperatorSpec, m: int) -> tuple[DiffOp, ...]:
    return tuple(bch_polynomial(taylor_term(spec, 0), taylor_term(spec, m), m))


@lru_cache(maxsize=None)
def _bch_shifted(spec: OperatorSpec, m: int, slot: int) -> DiffOp:
    """``P_m(1 - σ_slot)`` as an operator with σ-dependent coefficients."""
    one_minus = ScalarCoef.const(1) - ScalarCoef.atom(sigma(slot))
    out = DiffOp.zero(spec.dim)
    for k, term in enumerate(_bch_terms(spec, m)):
        if not term.is_zero():
            out = out + term.scale(one_minus**k)
    return out


@lru_cache(maxsize=None)
def assemble_P_alpha(spec: OperatorSpec, alpha: tuple[int, ...]) -> DiffOp:
    """``∫_{Σ_k} P_{α_1}(1-σ_1) ∘ … ∘ P_{α_k}(1-σ_k) dσ``, composed left to right."""
    alpha = tuple(alpha)
    if not alpha or min(alpha) < 1:
        raise ValueError("multi-index entries must be >= 1")
    k = len(alpha)
    prod = _bch_shifted(spec, alpha[0], 1)
    for slot, m in enumerate(alpha[1:], start=2):
        if prod.is_zero():
            break
        prod = compose(prod, _bch_shifted(spec, m, slot))
    return prod.map_coefs(lambda c: integrate_sigma(c, k))


@lru_cache(maxsize=None)
def assemble_P_ell(spec: OperatorSpec, ell: int) -> DiffOp:
    """``Σ_{α ∈ A_ℓ} P_α``; the identity for ``ℓ = 0``."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    if ell == 0:
        return DiffOp.identity(spec.dim)
    out = DiffOp.zero(spec.dim)
    for alpha in enumerate_indices(ell):
        out = out + assemble_P_alpha(spec, alpha)
    return out
