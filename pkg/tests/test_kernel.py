import math
import warnings
from itertools import product

import numpy as np
import pytest
import sympy as sp

from dysontaylor.dyson import EllipticityError, OperatorSpec
from dysontaylor.grids import Grid
from dysontaylor.kernel import (
    BUILTIN_RULES,
    CenterRule,
    GaussData,
    KernelError,
    MarginWarning,
    apply_kernel,
    approx_kernel,
    expansion,
    frak_P,
    gauss_eval,
    hermite_apply,
)
from dysontaylor.verify import exact_const_kernel

SINE = OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], gamma=0.75)

# True kernel of the sine operator at t = 0.01, x = y = 0, from a
# Crank-Nicolson column Richardson-extrapolated in the grid spacing and the
# start-up time of a narrow initial Gaussian.
SINE_KERNEL_T001 = 2.820618


# -- Gaussian data -----------------------------------------------------------


def test_gauss_eval_examples():
    g = GaussData.from_matrix([[1.0]])
    assert gauss_eval(g, [0.0]) == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-15)
    assert gauss_eval(g, [2.0]) == pytest.approx(math.exp(-1) / math.sqrt(4 * math.pi), rel=1e-15)
    g2 = GaussData.from_matrix(np.diag([1.0, 4.0]))
    assert gauss_eval(g2, [0.0, 0.0]) == pytest.approx(1 / (4 * math.pi * 2), rel=1e-15)


def test_gauss_rejects_indefinite_or_asymmetric():
    with pytest.raises(EllipticityError):
        GaussData.from_matrix([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(EllipticityError):
        GaussData.from_matrix([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(EllipticityError):
        GaussData.from_matrix([[0.5]], gamma=0.75)


def test_gauss_batch_shape():
    g = GaussData.from_matrix(np.diag([1.0, 2.0]))
    w = np.zeros((3, 4, 2))
    assert gauss_eval(g, w).shape == (3, 4)


# -- Hermite polynomials -----------------------------------------------------


def test_hermite_examples_1d():
    g = GaussData.from_matrix([[1.0]])
    assert hermite_apply((0,), g).coefs == {(0,): 1.0}
    assert hermite_apply((1,), g).coefs == {(1,): -0.5}
    assert hermite_apply((2,), g).coefs == {(0,): -0.5, (2,): 0.25}


def _fd_derivative(f, w, gamma, h=1e-2):
    # nested fourth-order central differences
    stencil = {-2: 1 / 12, -1: -2 / 3, 1: 2 / 3, 2: -1 / 12}
    if not any(gamma):
        return f(w)
    i = next(ax for ax, g in enumerate(gamma) if g)
    rest = tuple(g - (ax == i) for ax, g in enumerate(gamma))
    acc = 0.0
    for k, c in stencil.items():
        step = np.zeros_like(w)
        step[..., i] = k * h
        acc = acc + c * _fd_derivative(f, w + step, rest, h)
    return acc / h


@pytest.mark.parametrize("gamma", [g for g in product(range(5), repeat=2) if sum(g) <= 4])
def test_hermite_against_finite_differences(gamma):
    A = np.array([[1.2, 0.3], [0.3, 0.8]])
    g = GaussData.from_matrix(A)
    H = hermite_apply(gamma, g)
    assert H.degree == sum(gamma)
    w = np.random.default_rng(sum(gamma)).normal(size=(10, 2))
    want = _fd_derivative(lambda p: gauss_eval(g, p), w, gamma)
    got = H(w) * gauss_eval(g, w)
    assert np.allclose(got, want, rtol=1e-5, atol=1e-7)


# -- kernel polynomials ------------------------------------------------------


def test_frak_P_zero_is_one():
    kp = frak_P(SINE, 0, [0.3])
    assert kp.terms == {((0,), (0,)): 1.0}


def test_frak_P_pure_diffusion_1d():
    z = 0.4
    a = 1 + 0.25 * math.sin(z)
    da = 0.25 * math.cos(z)
    v, u = sp.symbols("v u")
    G = sp.exp(-(v**2) / (4 * a))
    H2 = sp.simplify(sp.diff(G, v, 2) / G)
    H3 = sp.simplify(sp.diff(G, v, 3) / G)
    want = sp.lambdify((u, v), da * u * H2 + a * da * H3)
    kp = frak_P(SINE, 1, [z])
    assert kp.degrees() == (1, 3)
    for uu, vv in [(0.1, 0.2), (-0.5, 1.3), (0.0, -2.0)]:
        assert kp([uu], [vv]) == pytest.approx(want(uu, vv), rel=1e-12, abs=1e-14)


def test_frak_P_drift_and_potential_series():
    # √t-series of the exact constant-coefficient kernel with a = 1, b = 3/5, c = -2/7
    spec = OperatorSpec.from_strings([["1"]], ["3/5"], "-2/7", gamma=1.0)
    v = sp.symbols("v")
    want = {
        1: -3 * v / 10,
        2: sp.Rational(9, 200) * v**2 - sp.Rational(263, 700),
        3: -sp.Rational(9, 2000) * v**3 + sp.Rational(789, 7000) * v,
    }
    for ell, poly in want.items():
        kp = frak_P(spec, ell, [0.0])
        for vv in (-1.5, 0.3, 2.0):
            assert kp([0.0], [vv]) == pytest.approx(float(poly.subs(v, vv)), rel=1e-12, abs=1e-14)


def test_frak_P_drift_series_from_exact_kernel():
    # the same series derived here from the exact kernel rather than hard-coded
    b, c = sp.Rational(3, 5), sp.Rational(-2, 7)
    s, v = sp.symbols("s v", positive=True)
    K = sp.exp(c * s**2) * sp.exp(-((v + b * s) ** 2) / 4) / sp.exp(-(v**2) / 4)
    series = sp.series(K, s, 0, 4).removeO()
    spec = OperatorSpec.from_strings([["1"]], ["3/5"], "-2/7", gamma=1.0)
    for ell in range(1, 4):
        coef = sp.expand(series.coeff(s, ell))
        kp = frak_P(spec, ell, [1.0])
        for vv in (-1.0, 0.5, 1.7):
            assert kp([0.0], [vv]) == pytest.approx(float(coef.subs(v, vv)), rel=1e-12, abs=1e-14)


def test_kernel_poly_degree_bounds():
    spec = OperatorSpec.from_strings([["2 + sin(x1)"]], ["cos(x1)"], "x1/(1 + x1^2)", gamma=1.0)
    for ell in range(5):
        da, db = frak_P(spec, ell, [0.2]).degrees()
        assert da <= ell and db <= 3 * ell


def test_kernel_poly_json():
    doc = frak_P(SINE, 1, [0.0]).to_json()
    assert doc["ell"] == 1
    assert {(tuple(t["alpha"]), tuple(t["beta"])) for t in doc["terms"]} == {((1,), (0,)), ((1,), (2,)), ((0,), (1,)), ((0,), (3,))}


# -- center rules ------------------------------------------------------------


@pytest.mark.parametrize("rule", BUILTIN_RULES, ids=str)
def test_center_rules_fix_diagonal(rule):
    x = np.random.default_rng(1).uniform(0.1, 5, size=(1000, 2))
    assert np.array_equal(rule(x, x), x)


def test_center_rule_values():
    x, y = np.array([4.0]), np.array([1.0])
    assert CenterRule("midpoint")(x, y)[0] == 2.5
    assert CenterRule("affine", 0.25)(x, y)[0] == 1.75
    assert CenterRule("geometric")(x, y)[0] == 2.0
    with pytest.raises(KernelError):
        CenterRule("geometric")(np.array([-1.0]), y)
    with pytest.raises(ValueError):
        CenterRule("nearest")


def test_center_rule_json():
    assert CenterRule.from_json("midpoint") == CenterRule("midpoint")
    assert CenterRule.from_json({"rule": "affine", "lambda": 0.3}) == CenterRule("affine", 0.3)
    assert str(CenterRule("affine", 0.3)) == "affine(0.3)"


# -- kernels -----------------------------------------------------------------


def test_mu_zero_heat_kernel():
    spec = OperatorSpec.from_strings([["1"]], gamma=1.0)
    got = approx_kernel(spec, 0, CenterRule("x"), 0.5, [0.3], [-0.2])
    assert got == pytest.approx(math.exp(-0.25 / 2) / math.sqrt(2 * math.pi), rel=1e-14)


@pytest.mark.parametrize("mu", range(4))
def test_constant_diffusion_exact_for_every_order(mu):
    A = np.array([[1.5, 0.4], [0.4, 0.9]])
    spec = OperatorSpec.from_strings([["1.5", "0.4"], ["0.4", "0.9"]], gamma=0.5)
    rng = np.random.default_rng(mu)
    for rule in BUILTIN_RULES:
        x = rng.uniform(0.5, 2, size=2)
        y = rng.uniform(0.5, 2, size=2)
        t = float(rng.uniform(0.05, 1))
        assert approx_kernel(spec, mu, rule, t, x, y) == pytest.approx(
            exact_const_kernel(A, 0, 0, t, x, y), rel=1e-12
        )


@pytest.mark.parametrize("mu, tol", [(1, 0.05 * 0.01), (2, 0.05 * 0.01**1.5), (3, 0.05 * 0.01**1.5)])
@pytest.mark.parametrize("rule", ["x", "midpoint"])
def test_sine_kernel_against_frozen_reference(mu, tol, rule):
    got = approx_kernel(SINE, mu, CenterRule(rule), 0.01, [0.0], [0.0])
    assert abs(got - SINE_KERNEL_T001) / SINE_KERNEL_T001 <= tol


def test_ellipticity_violation_raises():
    spec = OperatorSpec.from_strings([["1 + 0.5*sin(x1)"]], gamma=0.75)
    with pytest.raises(EllipticityError):
        approx_kernel(spec, 1, CenterRule("x"), 0.1, [-1.5], [-1.5])


def test_nonpositive_time_rejected():
    with pytest.raises(ValueError):
        approx_kernel(SINE, 1, CenterRule("x"), 0.0, [0.0], [0.0])


def test_expansion_cached():
    assert expansion(SINE, 2) is expansion(SINE, 2)


# -- applying kernels --------------------------------------------------------


def test_apply_constant_and_odd_data():
    spec = OperatorSpec.from_strings([["1"]], gamma=1.0)
    grid = Grid.from_spacing(-8, 8, 0.01)
    x = grid.axes()[0]
    f = np.exp(-(x**2))
    u = apply_kernel(spec, 1, CenterRule("x"), 0.05, f, grid)
    want = np.exp(-(x**2) / 1.2) / math.sqrt(1.2)
    assert np.max(np.abs(u - want)) < 1e-8
    odd = x * np.exp(-(x**2))
    u = apply_kernel(spec, 1, CenterRule("midpoint"), 0.05, odd, grid)
    assert abs(u[len(x) // 2]) < 1e-14


def test_apply_sine_preserves_constants_in_the_interior():
    grid = Grid.from_spacing(-8, 8, 0.01)
    x = grid.axes()[0]
    f = np.where(np.abs(x) < 6, 1.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginWarning)
        u = apply_kernel(SINE, 2, CenterRule("x"), 0.01, f, grid)
    inner = np.abs(x) < 5
    # L1 = 0 on constants, so the integral of the kernel is 1 + O(t^{3/2})
    assert np.max(np.abs(u[inner] - 1)) < 5e-3


def test_margin_warning():
    spec = OperatorSpec.from_strings([["1"]], gamma=1.0)
    grid = Grid.from_spacing(-2, 2, 0.05)
    with pytest.warns(MarginWarning):
        apply_kernel(spec, 0, CenterRule("x"), 0.1, np.ones(grid.shape), grid)


def test_apply_shape_mismatch():
    grid = Grid.from_spacing(-2, 2, 0.1)
    with pytest.raises(ValueError):
        apply_kernel(SINE, 0, CenterRule("x"), 0.1, np.ones(5), grid)
