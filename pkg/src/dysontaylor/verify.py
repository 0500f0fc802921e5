"""Reference solutions and error measurement.

Exact kernels for constant coefficients, a Crank-Nicolson solver for the
non-divergence-form operator, discrete weighted Sobolev norms and log-log
slope fitting.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import sparse, stats
from scipy.sparse.linalg import splu

from .dyson import OperatorSpec
from .expr import evaluate
from .grids import Grid, Grid1D, Grid2D  # noqa: F401  (re-exported)


class SolverError(RuntimeError):
    pass


class BoundaryWarning(UserWarning):
    pass


def exact_const_kernel(A0, b0, c0, t, x, y):
    """Heat kernel of ``Σ a_ij ∂_i∂_j + Σ b_k ∂_k + c`` with constant coefficients.

    ``e^{c t} (4πt)^{-N/2} det(A)^{-1/2} exp(-(x+bt-y)ᵀ A⁻¹ (x+bt-y) / (4t))``;
    ``x`` and ``y`` broadcast as ``(..., N)``.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    n = A0.shape[0]
    try:
        chol = np.linalg.cholesky(A0)
    except np.linalg.LinAlgError as exc:
        raise ValueError("A0 must be symmetric positive definite") from exc
    if not np.allclose(A0, A0.T):
        raise ValueError("A0 must be symmetric positive definite")
    b0 = np.broadcast_to(np.asarray(b0, dtype=float), (n,))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0 or x.shape[-1] != n:
        x = x[..., None]
    if y.ndim == 0 or y.shape[-1] != n:
        y = y[..., None]
    t = np.asarray(t, dtype=float)
    d = x + b0 * t[..., None] - y
    sol = np.linalg.solve(chol, np.moveaxis(d, -1, 0).reshape(n, -1))
    quad = np.sum(sol**2, axis=0).reshape(d.shape[:-1])
    det = np.prod(np.diag(chol)) ** 2
    out = np.exp(c0 * t) * (4 * math.pi * t) ** (-n / 2) / math.sqrt(det) * np.exp(-quad / (4 * t))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Crank-Nicolson


def _axis_ops(k: int, h: float):
    d1 = sparse.diags([-1.0, 1.0], [-1, 1], shape=(k, k)) / (2 * h)
    d2 = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(k, k)) / h**2
    return d1.tocsr(), d2.tocsr()


def _embed(op, axis: int, shape):
    out = None
    for ax, k in enumerate(shape):
        m = op if ax == axis else sparse.identity(k, format="csr")
        out = m if out is None else sparse.kron(out, m, format="csr")
    return out


def assemble_operator(spec: OperatorSpec, grid: Grid):
    """Finite-difference matrix of ``L`` on interior nodes (zero Dirichlet data outside)."""
    if spec.dim != grid.dim:
        raise ValueError("operator and grid dimensions differ")
    inner_shape = tuple(k - 2 for k in grid.n)
    axes = [ax[1:-1] for ax in grid.axes()]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    d1, d2 = [], []
    for axis, (k, h) in enumerate(zip(inner_shape, grid.h)):
        a1, a2 = _axis_ops(k, h)
        d1.append(_embed(a1, axis, inner_shape))
        d2.append(_embed(a2, axis, inner_shape))
    size = pts.shape[0]
    L = sparse.csr_matrix((size, size))
    for i in range(grid.dim):
        for j in range(i, grid.dim):
            coef = np.broadcast_to(evaluate(spec.a[i][j], pts), (size,))
            if not np.any(coef):
                continue
            if i == j:
                L = L + sparse.diags(coef) @ d2[i]
            else:
                L = L + sparse.diags(2.0 * coef) @ (d1[i] @ d1[j])
    for k in range(grid.dim):
        coef = np.broadcast_to(evaluate(spec.b[k], pts), (size,))
        if np.any(coef):
            L = L + sparse.diags(coef) @ d1[k]
    c = np.broadcast_to(evaluate(spec.c, pts), (size,))
    if np.any(c):
        L = L + sparse.diags(c)
    return L.tocsc()


def cn_solve(spec: OperatorSpec, f, t_final: float, steps: int, grid: Grid, smoothing_steps: int = 0):
    """Approximate ``e^{t L} f`` with Crank-Nicolson on ``grid``.

    ``f`` is sampled on all nodes; boundary values are forced to zero.
    ``smoothing_steps`` replaces the first CN steps by pairs of half-size
    implicit Euler steps, which damps the high-frequency content of rough
    initial data.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"f has shape {f.shape}, grid has shape {grid.shape}")
    if steps < 1 or not t_final > 0:
        raise ValueError("need t_final > 0 and at least one step")
    dt = t_final / steps
    if dt > min(grid.h) * (1 + 1e-12):
        raise ValueError(f"time step {dt:.3g} exceeds grid spacing {min(grid.h):.3g}")
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    L = assemble_operator(spec, grid)
    eye = sparse.identity(L.shape[0], format="csc")
    try:
        # also the implicit Euler matrix for a half step
        lu = splu((eye - 0.5 * dt * L).tocsc())
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    rhs_op = (eye + 0.5 * dt * L).tocsr()
    u = f[inner].ravel().copy()
    for n in range(steps):
        if n < smoothing_steps:
            u = lu.solve(u)
            u = lu.solve(u)
        else:
            u = lu.solve(rhs_op @ u)
    if not np.all(np.isfinite(u)):
        raise SolverError("non-finite values in Crank-Nicolson solution")
    out = np.zeros(grid.shape)
    out[inner] = u.reshape(tuple(k - 2 for k in grid.n))
    peak = np.max(np.abs(out))
    edge = _edge_max(out)
    if peak > 0 and edge > 1e-8 * peak:
        warnings.warn(
            f"solution reaches the truncated boundary ({edge / peak:.2e} of max)", BoundaryWarning, stacklevel=2
        )
    return out


def _edge_max(u: np.ndarray) -> float:
    m = 0.0
    for axis in range(u.ndim):
        for idx in (1, -2):
            m = max(m, float(np.max(np.abs(np.take(u, idx, axis=axis)))))
    return m


# --------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class NormSpec:
    """Discrete ``W^{m,p}_{a,w}`` norm: derivatives of ``e^{a<x-w>} u`` in ``L^p``."""

    p: float = 2.0
    a: float = 0.0
    w: tuple[float, ...] = (0.0,)
    m: int = 0

    def __post_init__(self):
        if not (self.p == math.inf or self.p >= 1):
            raise ValueError("p must be >= 1 or inf")
        if self.m < 0:
            raise ValueError("m must be nonnegative")
        if not all(math.isfinite(v) for v in (self.a, *self.w)):
            raise ValueError("norm parameters must be finite")

    @classmethod
    def from_json(cls, doc) -> "NormSpec":
        p = doc.get("p", 2)
        p = math.inf if p in ("inf", "Infinity", math.inf) else float(p)
        w = doc.get("w", [0.0])
        return cls(p=p, a=float(doc.get("a", 0.0)), w=tuple(float(v) for v in np.atleast_1d(w)), m=int(doc.get("m", 0)))


def weight(ns: NormSpec, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    w = np.broadcast_to(np.asarray(ns.w, dtype=float), points.shape[-1:])
    bracket = np.sqrt(1.0 + np.sum((points - w) ** 2, axis=-1))
    return np.exp(ns.a * bracket)


def norm(u, ns: NormSpec, grid: Grid) -> float:
    """``(Σ_{|α|≤m} ‖∂^α(e^{a<x-w>} u)‖_p^p)^{1/p}`` with Riemann weight ``h^N``."""
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError("u does not match the grid")
    if ns.m and min(grid.n) < 2 * ns.m + 1:
        raise ValueError("grid too small for the derivative stencil")
    v = weight(ns, grid.points()) * u
    vol = grid.cell_volume()
    total = 0.0
    for alpha in product(range(ns.m + 1), repeat=grid.dim):
        if sum(alpha) > ns.m:
            continue
        d = v
        for axis, order in enumerate(alpha):
            for _ in range(order):
                d = np.gradient(d, grid.h[axis], axis=axis, edge_order=2)
        if ns.p == math.inf:
            total = max(total, float(np.max(np.abs(d))))
        else:
            total += float(np.sum(np.abs(d) ** ns.p) * vol)
    return total if ns.p == math.inf else total ** (1.0 / ns.p)


# --------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    ts: list[float]
    errors: list[float]
    slope: float
    halfwidth: float
    intercept: float
    running: list[float] = field(default_factory=list)
    degenerate: bool = False
    target: float | None = None
    tolerance: float | None = None

    @property
    def passed(self) -> bool | None:
        # a fit through solver noise says nothing about the expansion
        if self.target is None or self.tolerance is None or self.degenerate:
            return None
        return abs(self.slope - self.target) <= self.tolerance

    def csv_rows(self):
        yield ("t", "error", "running_slope")
        for t, e, r in zip(self.ts, self.errors, [""] + self.running):
            yield (t, e, r)

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "halfwidth": self.halfwidth,
            "target": self.target,
            "tolerance": self.tolerance,
            "degenerate": self.degenerate,
            "pass": self.passed,
            "points": len(self.ts),
        }


def convergence_order(errors, ts, noise_floor: float | None = None, confidence: float = 0.95) -> ConvergenceReport:
    """Least-squares slope of ``log(error)`` against ``log(t)``.

    The half-width is the ``confidence`` Student-t interval of the slope.
    With ``noise_floor`` given, a run whose errors all sit at or below it is
    flagged ``degenerate``.
    """
    errors = [float(e) for e in errors]
    ts = [float(t) for t in ts]
    if len(errors) != len(ts):
        raise ValueError("errors and ts differ in length")
    if len(ts) < 4:
        raise ValueError("need at least 4 (t, error) pairs")
    if any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError("t ladder must be positive and strictly decreasing")
    if any(not e > 0 for e in errors):
        raise ValueError("errors must be positive")
    lx, ly = np.log(ts), np.log(errors)
    n = len(ts)
    xm, ym = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = ly - (intercept + slope * lx)
    s2 = float(np.sum(resid**2)) / (n - 2)
    se = math.sqrt(s2 / sxx)
    half = float(stats.t.ppf(0.5 + confidence / 2, n - 2) * se)
    running = [float((ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1])) for i in range(1, n)]
    degenerate = noise_floor is not None and all(e <= noise_floor for e in errors)
    return ConvergenceReport(ts, errors, slope, half, intercept, running, degenerate)
