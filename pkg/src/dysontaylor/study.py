"""Convergence experiments: expansion against a refined Crank-Nicolson reference.

The reference at each ``t`` is Richardson-extrapolated Crank-Nicolson on
nested grids (spacing ``h / 2^j``, time step proportional to the spacing),
so the extrapolation removes both the ``h²`` and ``Δt²`` terms. Levels are
added until the reference error estimate is at most ``solver_fraction`` of
the smallest expansion error, or the level budget runs out.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyson import OperatorSpec
from .expr import Expr, Var, add, as_expr, diff, func, mul, power
from .kernel import CenterRule, apply_kernel
from .verify import ConvergenceReport, NormSpec, SolverError, cn_solve, convergence_order, norm
from .grids import Grid

DataFn = Callable[[np.ndarray, float], np.ndarray]


def bump(points, radius: float, center=None) -> np.ndarray:
    """``exp(-1 / (1 - |x - c|²/R²))`` inside the ball of radius ``R``, zero outside."""
    points = np.asarray(points, dtype=float)
    c = np.zeros(points.shape[-1]) if center is None else np.asarray(center, dtype=float)
    r2 = np.sum((points - c) ** 2, axis=-1) / radius**2
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def bump_data(radius: float, center=None) -> DataFn:
    return lambda points, t: bump(points, radius, center)


def oscillating_data(radius: float, center=None) -> DataFn:
    """Bump times ``cos(x₁/√t)``: data varying on the parabolic length scale."""

    def data(points, t):
        points = np.asarray(points, dtype=float)
        return bump(points, radius, center) * np.cos(points[..., 0] / math.sqrt(t))

    return data


def weighted_data(data: DataFn, a: float, w=None) -> DataFn:
    def out(points, t):
        points = np.asarray(points, dtype=float)
        ww = np.zeros(points.shape[-1]) if w is None else np.asarray(w, dtype=float)
        bracket = np.sqrt(1.0 + np.sum((points - ww) ** 2, axis=-1))
        return np.exp(a * bracket) * data(points, t)

    return out


# --------------------------------------------------------------------------
# conjugation by the weight


def bracket_expr(dim: int, w=None) -> Expr:
    """``<x - w> = (1 + |x - w|²)^{1/2}``, written with ``exp`` and ``log``."""
    w = [0.0] * dim if w is None else list(w)
    shifted = [add(Var(i + 1), as_expr(-float(wi))) if wi else Var(i + 1) for i, wi in enumerate(w)]
    inner = add(as_expr(1), *(power(s, 2) for s in shifted))
    return func("exp", mul(as_expr(Fraction(1, 2)), func("log", inner)))


def conjugated_spec(spec: OperatorSpec, a: float, w=None) -> OperatorSpec:
    """Coefficients of ``e^{aφ} L e^{-aφ}`` with ``φ = <x - w>``.

    The second-order part is unchanged; ``b_k ↦ b_k - 2a Σ_j a_kj ∂_jφ`` and
    ``c ↦ c - a Σ_k b_k ∂_kφ + Σ_ij a_ij (a² ∂_iφ ∂_jφ - a ∂_i∂_jφ)``.
    """
    n = spec.dim
    phi = bracket_expr(n, w)
    grad = [diff(phi, i + 1) for i in range(n)]
    hess = [[diff(grad[i], j + 1) for j in range(n)] for i in range(n)]
    b = tuple(
        add(spec.b[k], *(mul(as_expr(-2 * a), spec.a[k][j], grad[j]) for j in range(n))) for k in range(n)
    )
    zero_order = [spec.c]
    zero_order += [mul(as_expr(-a), spec.b[k], grad[k]) for k in range(n)]
    for i in range(n):
        for j in range(n):
            zero_order.append(mul(spec.a[i][j], add(mul(as_expr(a * a), grad[i], grad[j]), mul(as_expr(-a), hess[i][j]))))
    return OperatorSpec(dim=n, a=spec.a, b=b, c=add(*zero_order), gamma=spec.gamma)


# --------------------------------------------------------------------------
# reference solutions


def refined_grid(grid: Grid, level: int) -> Grid:
    k = 2**level
    return Grid(grid.lower, grid.upper, tuple((m - 1) * k + 1 for m in grid.n))


def _restrict(u: np.ndarray, level: int) -> np.ndarray:
    k = 2**level
    return u[tuple(slice(None, None, k) for _ in range(u.ndim))]


@dataclass
class Reference:
    """Richardson-extrapolated reference on the nodes of the evaluation grid."""

    values: np.ndarray
    error_estimate: float
    levels: int


class _ReferenceLadder:
    """Crank-Nicolson solutions at successively halved spacing for one ``t``."""

    def __init__(self, spec: OperatorSpec, data: DataFn, t: float, grid: Grid, ns: NormSpec, steps_per_h: float):
        self.spec, self.data, self.t, self.grid, self.ns = spec, data, t, grid, ns
        self.steps_per_h = steps_per_h
        self.raw: list[np.ndarray] = []
        self.extrap: list[np.ndarray] = []

    def _solve(self, level: int) -> np.ndarray:
        g = refined_grid(self.grid, level)
        # exact halving of Δt with h keeps the Richardson combination consistent
        steps = max(4, math.ceil(self.steps_per_h * self.t / min(self.grid.h))) * 2**level
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            u = cn_solve(self.spec, self.data(g.points(), self.t), self.t, steps, g)
        return _restrict(u, level)

    def refine(self) -> Reference:
        while len(self.raw) < 2:
            self.raw.append(self._solve(len(self.raw)))
        if not self.extrap:
            self.extrap.append((4 * self.raw[1] - self.raw[0]) / 3)
        else:
            self.raw.append(self._solve(len(self.raw)))
            self.extrap.append((4 * self.raw[-1] - self.raw[-2]) / 3)
        if len(self.extrap) >= 2:
            est = norm(self.extrap[-1] - self.extrap[-2], self.ns, self.grid)
        else:
            # plain CN error at the finer level bounds the extrapolated error
            est = norm(self.extrap[-1] - self.raw[-1], self.ns, self.grid)
        return Reference(self.extrap[-1], est, len(self.raw))


# --------------------------------------------------------------------------
# studies


@dataclass
class StudyResult:
    ts: list[float]
    reports: dict[tuple[int, str], ConvergenceReport]
    reference_errors: list[float]
    reference_levels: list[int]
    reference_ok: bool
    data_norms: list[float] = field(default_factory=list)

    @property
    def min_error(self) -> float:
        return min(min(r.errors) for r in self.reports.values())


def target_slope(mu: int) -> float:
    return (mu + 1) / 2


def run_convergence(
    spec: OperatorSpec,
    data: DataFn,
    mus: Sequence[int],
    rules: Sequence[CenterRule],
    ts: Sequence[float],
    grid: Grid,
    ns: NormSpec = NormSpec(),
    tolerance: float = 0.3,
    solver_fraction: float = 0.1,
    max_levels: int = 5,
    steps_per_h: float = 1.0,
    backend: str | None = None,
) -> StudyResult:
    """Expansion errors ``‖e^{tL}f - G_t f‖`` along the ``t`` ladder for each ``(μ, rule)``.

    ``data(points, t)`` gives the initial function; it is resampled on every
    reference grid. Reports carry the target ``(μ+1)/2`` and are flagged
    degenerate when every error sits at or below the reference error.
    """
    ts = [float(t) for t in ts]
    pts = grid.points()
    ladders = [_ReferenceLadder(spec, data, t, grid, ns, steps_per_h) for t in ts]
    refs = [lad.refine() for lad in ladders]
    samples = [data(pts, t) for t in ts]
    approx = {
        (mu, rule): [apply_kernel(spec, mu, rule, t, f, grid, backend=backend) for t, f in zip(ts, samples)]
        for mu in mus
        for rule in rules
    }

    def errors():
        return {key: [norm(v - r.values, ns, grid) for v, r in zip(vals, refs)] for key, vals in approx.items()}

    errs = errors()
    floor_abs = 1e-13 * max(norm(f, ns, grid) for f in samples)
    while True:
        smallest = min(min(e) for e in errs.values())
        bad = [
            i
            for i, r in enumerate(refs)
            if r.error_estimate > solver_fraction * smallest and r.levels < max_levels
        ]
        if not bad:
            break
        for i in bad:
            refs[i] = ladders[i].refine()
        errs = errors()
    smallest = min(min(e) for e in errs.values())
    ref_ok = all(r.error_estimate <= solver_fraction * smallest for r in refs)
    noise = max(max(r.error_estimate for r in refs), floor_abs)
    reports = {}
    for (mu, rule), e in errs.items():
        rep = convergence_order([max(v, floor_abs) for v in e], ts, noise_floor=noise)
        rep.target = target_slope(mu)
        rep.tolerance = tolerance
        reports[(mu, str(rule))] = rep
    return StudyResult(
        ts,
        reports,
        [r.error_estimate for r in refs],
        [r.levels for r in refs],
        ref_ok,
        [norm(f, ns, grid) for f in samples],
    )


def identity_recovery(spec: OperatorSpec, mu: int, rule: CenterRule, ts, f, grid: Grid, ns: NormSpec = NormSpec()):
    """Relative distances ``‖G_t f - f‖ / ‖f‖`` along the ``t`` ladder."""
    base = norm(f, ns, grid)
    return [norm(apply_kernel(spec, mu, rule, t, f, grid) - f, ns, grid) / base for t in ts]


def dyadic_ladder(k_min: int = 4, k_max: int = 10) -> list[float]:
    return [2.0**-k for k in range(k_min, k_max + 1)]


__all__ = [
    "Reference",
    "SolverError",
    "StudyResult",
    "bracket_expr",
    "bump",
    "bump_data",
    "conjugated_spec",
    "dyadic_ladder",
    "identity_recovery",
    "oscillating_data",
    "refined_grid",
    "run_convergence",
    "target_slope",
    "weighted_data",
]
