"""Invariant checks run by ``dysontaylor selftest``.

Each check takes a seeded ``numpy.random.Generator`` and returns a
:class:`CheckResult`. Everything here is deterministic given the seed, so two
runs with the same seed produce identical reports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from . import _kernels, dyson
from .dyson import OperatorSpec, enumerate_indices, simplex_integrate
from .expr import diff, evaluate, parse
from .grids import Grid
from .kernel import CenterRule, GaussData, approx_kernel, expansion, gauss_eval
from .opalg import DiffOp, ScalarCoef, ad_power, commutator, compose, degree_order
from .verify import cn_solve, exact_const_kernel


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "pass": self.passed, "detail": self.detail}


def _rational(rng, scale: int = 5) -> Fraction:
    return Fraction(int(rng.integers(-scale, scale + 1)), int(rng.integers(1, 4)))


def random_diffop(rng, dim: int, degree: int, order: int, terms: int = 4) -> DiffOp:
    """Random operator in ``D(degree, order)`` with small rational coefficients."""
    out = DiffOp.zero(dim)
    for _ in range(terms):
        beta = _random_index(rng, dim, int(rng.integers(0, degree + 1)))
        gamma = _random_index(rng, dim, int(rng.integers(0, order + 1)))
        out = out + DiffOp.monomial(beta, gamma, _rational(rng))
    return out


def _random_index(rng, dim: int, total: int) -> tuple[int, ...]:
    idx = [0] * dim
    for _ in range(total):
        idx[int(rng.integers(dim))] += 1
    return tuple(idx)


def iterated_simplex_moment(exps) -> Fraction:
    """``∫ Π σ_j^{e_j}`` over ``1 ≥ σ_1 ≥ … ≥ σ_k ≥ 0`` by integrating innermost first."""
    power, coef = 0, Fraction(1)
    for e in reversed(exps):
        # ∫_0^s σ^e · (coef σ^power) dσ = coef s^{e+power+1} / (e+power+1)
        power += e + 1
        coef /= power
    return coef


# --------------------------------------------------------------------------


def check_index_counts(rng) -> CheckResult:
    bad = []
    for ell in range(1, 11):
        idx = enumerate_indices(ell)
        ok = len(idx) == 2 ** (ell - 1) and len(set(idx)) == len(idx)
        ok = ok and all(sum(a) == ell and min(a) >= 1 for a in idx)
        if not ok:
            bad.append(ell)
    return CheckResult("index_counts", not bad, f"failing orders {bad}" if bad else "orders 1..10")


def check_simplex_moments(rng) -> CheckResult:
    bad = []
    for k in range(1, 9):
        if simplex_integrate(dyson.SigmaPoly.monomial((0,) * k), k) != Fraction(1, math.factorial(k)):
            bad.append(("volume", k))
    for _ in range(30):
        k = int(rng.integers(1, 5))
        exps = tuple(int(e) for e in rng.integers(0, 5, size=k))
        if dyson.simplex_moment(exps) != iterated_simplex_moment(exps):
            bad.append(exps)
    return CheckResult("simplex_moments", not bad, f"mismatch {bad[:3]}" if bad else "30 random monomials, volumes k<=8")


def check_commutator_algebra(rng) -> CheckResult:
    problems = []
    for case in range(20):
        dim = int(rng.integers(1, 3))
        A, B, C = (random_diffop(rng, dim, 2, 2) for _ in range(3))
        if commutator(A, B) != -commutator(B, A):
            problems.append(f"antisymmetry case {case}")
        jac = commutator(A, commutator(B, C)) + commutator(B, commutator(C, A)) + commutator(C, commutator(A, B))
        if not jac.is_zero():
            problems.append(f"Jacobi case {case}")
        if compose(compose(A, B), C) != compose(A, compose(B, C)):
            problems.append(f"associativity case {case}")
    return CheckResult("commutator_algebra", not problems, "; ".join(problems[:3]) or "20 random triples")


def check_ad_nilpotent(rng) -> CheckResult:
    problems = []
    for case in range(30):
        dim = int(rng.integers(1, 3))
        m = int(rng.integers(1, 5))
        L0 = random_diffop(rng, dim, 0, 2)
        Lm = random_diffop(rng, dim, m, 2)
        for k in range(m + 2):
            op = ad_power(L0, Lm, k)
            a, b = degree_order(op)
            if k == m + 1 and not op.is_zero():
                problems.append(f"case {case}: ad^{k} nonzero")
            if not op.is_zero() and (a > m - k or b > k + 2):
                problems.append(f"case {case}: ad^{k} in D({a},{b})")
    return CheckResult("ad_nilpotent", not problems, "; ".join(problems[:3]) or "30 random pairs")


_SAMPLE_EXPRS = ("1 + 0.25*sin(x1)", "x1^2*exp(-x1/3)", "cos(x1)*log(2 + x1^2)", "(1 + x1)^3/(2 + x1^2)")


def check_expr_derivatives(rng) -> CheckResult:
    worst = 0.0
    for text in _SAMPLE_EXPRS:
        e = parse(text, 1)
        d = diff(e, 1)
        pts = rng.uniform(-2, 2, size=(10, 1))
        h = 1e-5
        fd = (evaluate(e, pts + h) - evaluate(e, pts - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - evaluate(d, pts)))))
    return CheckResult("expr_derivatives", worst < 1e-6, f"max deviation {worst:.3e}")


def check_constant_exactness(rng) -> CheckResult:
    worst = 0.0
    for dim in (1, 2):
        M = rng.normal(size=(dim, dim))
        A = M @ M.T + 0.5 * np.eye(dim)
        a = [[repr(float(A[i, j])) for j in range(dim)] for i in range(dim)]
        spec = OperatorSpec.from_strings(a, gamma=0.9 * float(np.min(np.linalg.eigvalsh(A))), dim=dim)
        for mu in range(3):
            for rule in (CenterRule("x"), CenterRule("midpoint"), CenterRule("affine", 0.3)):
                for _ in range(5):
                    t = float(rng.uniform(0.05, 1.0))
                    x, y = rng.normal(size=dim), rng.normal(size=dim)
                    got = approx_kernel(spec, mu, rule, t, x, y)
                    want = exact_const_kernel(A, np.zeros(dim), 0.0, t, x, y)
                    worst = max(worst, abs(got - want) / want)
    return CheckResult("constant_exactness", worst <= 1e-12, f"max relative error {worst:.3e}")


def check_gaussian_normalization(rng) -> CheckResult:
    worst = 0.0
    for dim in (1, 2):
        M = rng.normal(size=(dim, dim))
        A = M @ M.T + 0.5 * np.eye(dim)
        g = GaussData.from_matrix(A)
        reach = 12 * math.sqrt(float(np.max(np.linalg.eigvalsh(A))))
        grid = Grid.from_spacing([-reach] * dim, [reach] * dim, 0.05 if dim == 2 else 0.01)
        total = float(np.sum(gauss_eval(g, grid.points()) * grid.trapezoid_weights()))
        worst = max(worst, abs(total - 1.0))
    return CheckResult("gaussian_normalization", worst < 1e-8, f"max deviation {worst:.3e}")


def check_backend_agreement(rng) -> CheckResult:
    if not _kernels.HAVE_NUMBA or _kernels.BACKEND != "numba":
        return CheckResult("backend_agreement", True, "numba backend inactive, skipped")
    spec = OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], gamma=0.75)
    exp = expansion(spec, 2)
    x = rng.uniform(-2, 2, size=(200, 1))
    y = x + rng.normal(scale=0.3, size=(200, 1))
    a = exp.evaluate(0.1, x, y, CenterRule("midpoint"), backend="numpy")
    b = exp.evaluate(0.1, x, y, CenterRule("midpoint"), backend="numba")
    dev = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
    return CheckResult("backend_agreement", dev < 1e-12, f"max relative deviation {dev:.3e}")


def check_cn_mass(rng) -> CheckResult:
    spec = OperatorSpec.from_strings([["1"]], gamma=1.0)
    grid = Grid.from_spacing(-10, 10, 0.02)
    x = grid.axes()[0]
    f = np.exp(-(x**2))
    u = cn_solve(spec, f, 0.5, 50, grid)
    dev = abs(float(np.sum(u - f)) * grid.h[0]) / (float(np.sum(f)) * grid.h[0])
    return CheckResult("cn_mass", dev < 1e-6, f"relative mass change {dev:.3e}")


CHECKS = (
    check_index_counts,
    check_simplex_moments,
    check_commutator_algebra,
    check_ad_nilpotent,
    check_expr_derivatives,
    check_constant_exactness,
    check_gaussian_normalization,
    check_backend_agreement,
    check_cn_mass,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            results.append(check(rng))
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(check.__name__.removeprefix("check_"), False, f"{type(exc).__name__}: {exc}"))
    return results
