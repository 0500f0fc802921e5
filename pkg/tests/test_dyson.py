from fractions import Fraction
from math import factorial

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from dysontaylor.dyson import (
    EllipticityError,
    OperatorSpec,
    SigmaPoly,
    assemble_P_alpha,
    assemble_P_ell,
    bch_polynomial,
    enumerate_indices,
    simplex_integrate,
    simplex_moment,
    taylor_term,
)
from dysontaylor.opalg import DiffOp, ScalarCoef, ad_power, coef_atom, commutator, degree_order


def A(kind, index, deriv):
    return ScalarCoef.atom(coef_atom(kind, index, deriv))


def D(beta, gamma, coef=1):
    return DiffOp.monomial(beta, gamma, coef)


GENERIC_1D = OperatorSpec.from_strings([["2 + sin(x1)"]], ["exp(x1/3)"], "cos(x1)", gamma=1.0)


# -- OperatorSpec ------------------------------------------------------------


def test_spec_symmetrizes_a():
    spec = OperatorSpec.from_strings([["2", "x1"], ["0", "2"]], gamma=1.0)
    assert spec.a[0][1] == spec.a[1][0]
    assert spec.diffusion_matrix(np.array([0.5, 0.0]))[0, 1] == pytest.approx(0.25)


def test_spec_json_round_trip(tmp_path):
    spec = OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], ["x1/2"], "-1", gamma=0.75)
    path = tmp_path / "op.json"
    import json

    path.write_text(json.dumps(spec.to_json()))
    assert OperatorSpec.load(path) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        OperatorSpec.from_strings([["1"]], gamma=0.0)
    with pytest.raises(ValueError):
        OperatorSpec.from_strings([["1", "0"]], gamma=1.0)


def test_ellipticity_check():
    spec = OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], gamma=0.75)
    assert spec.check_ellipticity(np.linspace(-5, 5, 101)[:, None]) >= 0.75
    bad = OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], gamma=0.9)
    with pytest.raises(EllipticityError):
        bad.check_ellipticity(np.linspace(-5, 5, 101)[:, None])


# -- Taylor terms ------------------------------------------------------------


def test_taylor_terms_1d():
    L0 = taylor_term(GENERIC_1D, 0)
    L1 = taylor_term(GENERIC_1D, 1)
    L2 = taylor_term(GENERIC_1D, 2)
    assert L0 == DiffOp(1, {((0,), (2,)): A("a", (0, 0), (0,))})
    assert L1 == DiffOp(1, {((1,), (2,)): A("a", (0, 0), (1,)), ((0,), (1,)): A("b", (0,), (0,))})
    assert L2 == DiffOp(
        1,
        {
            ((2,), (2,)): A("a", (0, 0), (2,)) * Fraction(1, 2),
            ((1,), (1,)): A("b", (0,), (1,)),
            ((0,), (0,)): A("c", (), (0,)),
        },
    )
    for m in range(6):
        a, b = degree_order(taylor_term(GENERIC_1D, m))
        assert a <= m and b <= 2


def test_taylor_terms_2d_off_diagonal_weight():
    spec = OperatorSpec.from_strings(
        [["2 + sin(x1)", "x1*x2/4"], ["x1*x2/4", "2 + cos(x2)"]], ["x2", "x1"], "x1*x2", gamma=0.5
    )
    L0 = taylor_term(spec, 0)
    assert L0.terms[((0, 0), (1, 1))] == A("a", (0, 1), (0, 0)) * 2
    L1 = taylor_term(spec, 1)
    # ∂_1(x1 x2 / 4) and ∂_2 of it both survive; d/dx1 of "2 + cos(x2)" is pruned
    assert ((1, 0), (0, 2)) not in L1.terms
    assert L1.terms[((0, 1), (0, 2))] == A("a", (1, 1), (0, 1))
    assert L1.terms[((1, 0), (1, 1))] == A("a", (0, 1), (1, 0)) * 2
    L2 = taylor_term(spec, 2)
    assert L2.terms[((0, 0), (0, 0))] == A("c", (), (0, 0))
    assert L2.terms[((1, 1), (1, 1))] == A("a", (0, 1), (1, 1)) * 2


def test_constant_coefficients_have_no_corrections():
    spec = OperatorSpec.from_strings([["2", "1/2"], ["1/2", "3"]], gamma=1.0)
    for ell in range(1, 5):
        assert assemble_P_ell(spec, ell).is_zero()


# -- multi-indices -----------------------------------------------------------


def test_enumerate_examples():
    assert enumerate_indices(1) == [(1,)]
    assert enumerate_indices(3) == [(3,), (1, 2), (2, 1), (1, 1, 1)]
    assert len(enumerate_indices(5)) == 16


@pytest.mark.parametrize("ell", range(1, 13))
def test_enumerate_counts(ell):
    idx = enumerate_indices(ell)
    assert len(idx) == 2 ** (ell - 1)
    assert len(set(idx)) == len(idx)
    assert all(sum(a) == ell and min(a) >= 1 for a in idx)


# -- simplex integration -----------------------------------------------------


def test_simplex_examples():
    assert simplex_integrate(SigmaPoly.monomial((0, 0, 0)), 3) == Fraction(1, 6)
    for m in range(6):
        assert simplex_integrate(SigmaPoly.monomial((m,)), 1) == Fraction(1, m + 1)
    assert simplex_integrate(SigmaPoly.monomial((1, 1)), 2) == Fraction(1, 8)


def test_simplex_dimension_mismatch():
    with pytest.raises(ValueError):
        simplex_integrate(SigmaPoly.monomial((1, 1)), 3)


def _sympy_simplex(exps):
    s = sp.symbols(f"s1:{len(exps) + 1}")
    f = sp.prod([si**e for si, e in zip(s, exps)])
    for j in range(len(exps) - 1, -1, -1):
        upper = s[j - 1] if j else 1
        f = sp.integrate(f, (s[j], 0, upper))
    return Fraction(int(f.p), int(f.q))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=4))
def test_simplex_moment_matches_iterated_integral(exps):
    assert simplex_moment(tuple(exps)) == _sympy_simplex(exps)


def test_simplex_polynomial_linearity():
    p = SigmaPoly(2, {(1, 0): Fraction(3), (0, 2): Fraction(-1, 2), (0, 0): Fraction(1)})
    want = 3 * _sympy_simplex((1, 0)) - Fraction(1, 2) * _sympy_simplex((0, 2)) + Fraction(1, 2)
    assert simplex_integrate(p) == want


# -- BCH polynomials ---------------------------------------------------------

d2 = D((0,), (2,))


def test_bch_examples():
    assert bch_polynomial(d2, D((1,), (1,)), 1) == [D((1,), (1,)), D((0,), (2,), 2)]
    b = Fraction(3, 2)
    assert bch_polynomial(d2, D((0,), (1,), b), 1) == [D((0,), (1,), b), DiffOp.zero(1)]
    L = D((0,), (1,), 5)
    assert bch_polynomial(d2, L, 0) == [L]


def test_bch_preconditions():
    with pytest.raises(ValueError):
        bch_polynomial(D((1,), (2,)), D((1,), (1,)), 1)
    with pytest.raises(ValueError):
        bch_polynomial(d2, D((2,), (1,)), 1)
    with pytest.raises(ValueError):
        bch_polynomial(d2, D((0,), (3,)), 1)


def test_bch_total_in_expected_class():
    rng = np.random.default_rng(5)
    from dysontaylor.checks import random_diffop

    for m in range(1, 6):
        L0 = random_diffop(rng, 1, 0, 2)
        Lm = random_diffop(rng, 1, m, 2, terms=6)
        total = DiffOp.zero(1)
        for op in bch_polynomial(L0, Lm, m):
            total = total + op
        a, b = degree_order(total)
        assert a <= m and b <= m + 2


# -- Dyson operators ---------------------------------------------------------


def test_P_alpha_single_index_general():
    L0 = taylor_term(GENERIC_1D, 0)
    L1 = taylor_term(GENERIC_1D, 1)
    want = L1 + commutator(L0, L1).scale(Fraction(1, 2))
    assert assemble_P_alpha(GENERIC_1D, (1,)) == want


def test_P_alpha_pure_diffusion_1d():
    spec = OperatorSpec.from_strings([["2 + sin(x1)"]], gamma=1.0)
    a, da = A("a", (0, 0), (0,)), A("a", (0, 0), (1,))
    want = DiffOp(1, {((1,), (2,)): da, ((0,), (3,)): a * da})
    assert assemble_P_alpha(spec, (1,)) == want


def test_P_alpha_vanishes_without_second_order_taylor_term():
    spec = OperatorSpec.from_strings([["2 + x1/3"]], gamma=1.0)
    assert assemble_P_alpha(spec, (2,)).is_zero()


def test_P_ell_sums_indices():
    for ell in range(4):
        P = assemble_P_ell(GENERIC_1D, ell)
        if ell == 0:
            assert P == DiffOp.identity(1)
            continue
        want = DiffOp.zero(1)
        for alpha in enumerate_indices(ell):
            want = want + assemble_P_alpha(GENERIC_1D, alpha)
        assert P == want


@pytest.mark.parametrize("alpha", [a for ell in range(1, 5) for a in enumerate_indices(ell)])
def test_P_alpha_degree_bounds(alpha):
    a, b = degree_order(assemble_P_alpha(GENERIC_1D, alpha))
    ell, k = sum(alpha), len(alpha)
    assert a <= ell and b <= 2 * k + ell


def test_P_alpha_degree_bounds_2d():
    spec = OperatorSpec.from_strings(
        [["2 + sin(x1)*cos(x2)", "x1*x2/10"], ["x1*x2/10", "2 + cos(x1)"]], ["sin(x2)", "x1^2"], "cos(x1 + x2)", gamma=0.5
    )
    for ell in range(1, 4):
        for alpha in enumerate_indices(ell):
            a, b = degree_order(assemble_P_alpha(spec, alpha))
            assert a <= ell and b <= 2 * len(alpha) + ell


def test_P_alpha_rejects_bad_index():
    with pytest.raises(ValueError):
        assemble_P_alpha(GENERIC_1D, (1, 0))
    with pytest.raises(ValueError):
        assemble_P_alpha(GENERIC_1D, ())


def test_P_alpha_ordering_matters():
    # (1,2) and (2,1) differ for non-commuting Taylor terms
    assert assemble_P_alpha(GENERIC_1D, (1, 2)) != assemble_P_alpha(GENERIC_1D, (2, 1))


def test_ad_power_of_taylor_terms_vanishes_beyond_m():
    L0 = taylor_term(GENERIC_1D, 0)
    for m in range(1, 5):
        assert ad_power(L0, taylor_term(GENERIC_1D, m), m + 1).is_zero()


def test_simplex_volume_factorials():
    for k in range(1, 9):
        assert simplex_integrate(SigmaPoly.monomial((0,) * k)) == Fraction(1, factorial(k))
