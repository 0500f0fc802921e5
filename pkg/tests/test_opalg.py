"""Operator algebra checked against direct application to polynomials (sympy)."""
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from dysontaylor.checks import random_diffop
from dysontaylor.opalg import (
    Atom,
    DiffOp,
    ScalarCoef,
    ad_power,
    commutator,
    compose,
    degree_order,
)

W = sp.symbols("w1:3")


def D(beta, gamma, coef=1):
    return DiffOp.monomial(beta, gamma, coef)


def apply_op(op: DiffOp, f, values=None):
    """Act with ``op`` on the sympy expression ``f(w)``; atoms take ``values``."""
    out = 0
    for (beta, gamma), c in op.terms.items():
        if values is not None:
            c = c.substitute(values)
        val = sp.Rational(str(c.const_value()))
        g = f
        for i, k in enumerate(gamma):
            if k:
                g = sp.diff(g, W[i], k)
        out += val * sp.prod([W[i] ** b for i, b in enumerate(beta)]) * g
    return sp.expand(out)


def monomials(dim, max_degree=6):
    for beta in product(range(max_degree + 1), repeat=dim):
        if sum(beta) <= max_degree:
            yield sp.prod([W[i] ** b for i, b in enumerate(beta)])


# -- examples ----------------------------------------------------------------

d1 = D((0,), (1,))
d2 = D((0,), (2,))
w = D((1,), (0,))
wd = D((1,), (1,))


def test_compose_product_rule():
    assert compose(d1, w) == wd + DiffOp.identity(1)


def test_compose_second_derivative():
    assert compose(d2, wd) == D((1,), (3,)) + D((0,), (2,), 2)


def test_compose_zero():
    assert compose(wd, DiffOp.zero(1)).is_zero()
    assert compose(DiffOp.zero(1), wd).is_zero()


def test_commutator_examples():
    assert commutator(d2, wd) == D((0,), (2,), 2)
    assert commutator(d2, D((2,), (0,))) == D((1,), (1,), 4) + DiffOp.identity(1).scale(2)
    assert commutator(wd, wd).is_zero()


def test_examples_against_polynomial_action():
    for f in monomials(1):
        assert apply_op(compose(d2, wd), f) == sp.expand(apply_op(d2, apply_op(wd, f)))
        lhs = apply_op(commutator(d2, D((2,), (0,))), f)
        assert lhs == sp.expand(apply_op(d2, W[0] ** 2 * f) - W[0] ** 2 * apply_op(d2, f))


def test_ad_power_examples():
    assert ad_power(d2, wd, 1) == D((0,), (2,), 2)
    assert ad_power(d2, wd, 2).is_zero()
    assert ad_power(d2, wd, 0) == wd


def test_ad_power_requires_constant_coefficient_base():
    with pytest.raises(ValueError):
        ad_power(wd, d2, 1)


def test_degree_order_examples():
    assert degree_order(D((1,), (2,))) == (1, 2)
    assert degree_order(DiffOp.zero(1)) == (-1, -1)
    assert degree_order(D((0,), (2,), 2)) == (0, 2)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        compose(d1, D((0, 0), (1, 0)))
    with pytest.raises(ValueError):
        commutator(d1, D((0, 0), (1, 0)))


def test_zero_coefficients_pruned():
    op = wd + D((1,), (1,), -1)
    assert op.is_zero() and op.terms == {}


def test_pretty_and_json():
    op = D((0,), (2,), 2) + D((1,), (1,), Fraction(1, 3))
    assert op.pretty().splitlines() == ["2 * (x-z)^[0] * D^[2]", "(1/3) * (x-z)^[1] * D^[1]"]
    assert op.to_json_terms() == [
        {"beta": [0], "gamma": [2], "coef": "2"},
        {"beta": [1], "gamma": [1], "coef": "(1/3)"},
    ]


# -- symbolic coefficients ---------------------------------------------------


def test_symbolic_coefficients_substitute_like_numbers():
    p, q = Atom("p", (0,)), Atom("q", (0,))
    A = DiffOp.monomial((1,), (2,), ScalarCoef.atom(p)) + d1
    B = DiffOp.monomial((2,), (1,), ScalarCoef.atom(q) ** 2)
    C = commutator(A, B)
    values = {p: Fraction(3, 7), q: Fraction(-2, 5)}
    for f in monomials(1):
        want = sp.expand(apply_op(A, apply_op(B, f, values), values) - apply_op(B, apply_op(A, f, values), values))
        assert apply_op(C, f, values) == want


def test_scalar_coef_ring():
    p = ScalarCoef.atom(Atom("p", (0,)))
    one = ScalarCoef.const(1)
    assert (p + one) * (p - one) == p**2 - one
    assert (p * 0).is_zero()
    assert str(p**2 * Fraction(3, 2)) == "(3/2)*p1^2"
    assert (p + one).evaluate({Atom("p", (0,)): np.array([1.0, 2.0])}).tolist() == [2.0, 3.0]


# -- randomized properties ---------------------------------------------------

seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 2))
def test_compose_matches_polynomial_action(seed, dim):
    rng = np.random.default_rng(seed)
    A = random_diffop(rng, dim, 2, 2, terms=5)
    B = random_diffop(rng, dim, 2, 2, terms=5)
    AB = compose(A, B)
    for f in monomials(dim, 6 if dim == 1 else 4):
        assert apply_op(AB, f) == sp.expand(apply_op(A, apply_op(B, f)))
    a1, b1 = degree_order(A)
    a2, b2 = degree_order(B)
    a, b = degree_order(AB)
    assert AB.is_zero() or (a <= a1 + a2 and b <= b1 + b2)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 2))
def test_antisymmetry_and_jacobi(seed, dim):
    rng = np.random.default_rng(seed)
    A, B, C = (random_diffop(rng, dim, 2, 2, terms=5) for _ in range(3))
    assert commutator(A, B) == -commutator(B, A)
    jac = commutator(A, commutator(B, C)) + commutator(B, commutator(C, A)) + commutator(C, commutator(A, B))
    assert jac.is_zero()


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 2))
def test_commutator_degree_drop(seed, dim):
    rng = np.random.default_rng(seed)
    A = random_diffop(rng, dim, 3, 2)
    B = random_diffop(rng, dim, 2, 3)
    C = commutator(A, B)
    if not C.is_zero():
        (a1, b1), (a2, b2) = degree_order(A), degree_order(B)
        a, b = degree_order(C)
        assert a <= a1 + a2 - 1 and b <= b1 + b2 - 1


@pytest.mark.parametrize("m", range(7))
def test_ad_power_closure(m):
    rng = np.random.default_rng(100 + m)
    for _ in range(10):
        dim = int(rng.integers(1, 3))
        L0 = random_diffop(rng, dim, 0, 2)
        Lm = random_diffop(rng, dim, m, 2, terms=5)
        for k in range(m + 2):
            op = ad_power(L0, Lm, k)
            if k == m + 1:
                assert op.is_zero()
            elif not op.is_zero():
                a, b = degree_order(op)
                assert a <= m - k and b <= k + 2


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 2), st.integers(0, 4))
def test_ad_power_equals_iterated_commutator(seed, dim, m):
    rng = np.random.default_rng(seed)
    L0 = random_diffop(rng, dim, 0, 2) + DiffOp.monomial((0,) * dim, (1,) + (0,) * (dim - 1), ScalarCoef.atom(Atom("p", (0,))))
    Lm = random_diffop(rng, dim, m, 2)
    want = Lm
    for k in range(m + 2):
        assert ad_power(L0, Lm, k) == want
        want = commutator(L0, want)
