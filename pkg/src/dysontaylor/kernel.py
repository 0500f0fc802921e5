"""Explicit short-time kernel: polynomials times the frozen Gaussian.

Each term ``c(z) (x-z)^β ∂^γ`` of the order-ℓ Dyson operator acts on the
Gaussian ``G(z; x-y)`` as ``c(z) (x-z)^β H_γ(x-y) G(z; x-y)``, which gives the
kernel polynomial of order ℓ. The approximate kernel at time ``t`` is
``t^{-N/2} Σ_{ℓ≤μ} t^{ℓ/2} frakP^ℓ(z, z+(x-z)/√t, z+(y-z)/√t) G(z; (x-y)/√t)``
with the center ``z = z(x, y)`` chosen by a :class:`CenterRule`.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from itertools import product
from typing import Mapping

import numpy as np

from . import _kernels
from .dyson import EllipticityError, OperatorSpec, assemble_P_ell
from .grids import Grid

FOUR_PI = 4.0 * math.pi


class KernelError(ArithmeticError):
    """Non-finite kernel values or invalid kernel inputs."""


# --------------------------------------------------------------------------
# Gaussian data


@dataclass(frozen=True)
class GaussData:
    z: np.ndarray
    A: np.ndarray
    Ainv: np.ndarray
    detA: float

    @classmethod
    def from_matrix(cls, A, z=None, gamma: float | None = None) -> "GaussData":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        z = np.zeros(n) if z is None else np.asarray(z, dtype=float)
        batch = GaussBatch.from_matrices(A[None], gamma=gamma)
        return cls(z=z, A=A, Ainv=batch.Ainv[0], detA=float(batch.detA[0]))

    @classmethod
    def from_spec(cls, spec: OperatorSpec, z) -> "GaussData":
        z = np.asarray(z, dtype=float).reshape(spec.dim)
        return cls.from_matrix(spec.diffusion_matrix(z), z=z, gamma=spec.gamma)


@dataclass(frozen=True)
class GaussBatch:
    """Stacked ``A(z)``, its inverse and determinant for ``U`` centers."""

    A: np.ndarray
    Ainv: np.ndarray
    detA: np.ndarray

    @classmethod
    def from_matrices(cls, A, gamma: float | None = None) -> "GaussBatch":
        A = np.asarray(A, dtype=float)
        if not np.allclose(A, np.swapaxes(A, -1, -2), rtol=1e-12, atol=1e-14):
            raise EllipticityError("diffusion matrix is not symmetric")
        scale = np.linalg.norm(A, axis=(-2, -1))
        lam = np.linalg.eigvalsh(A)
        lam_min = lam[..., 0]
        if np.any(lam_min <= 1e-10 * scale):
            raise EllipticityError(f"diffusion matrix not positive definite (min eigenvalue {lam_min.min():.3g})")
        if gamma is not None and np.any(lam_min < gamma - 1e-12):
            raise EllipticityError(f"smallest eigenvalue {lam_min.min():.6g} below declared gamma={gamma}")
        chol = np.linalg.cholesky(A)
        diag = np.diagonal(chol, axis1=-2, axis2=-1)
        detA = np.prod(diag, axis=-1) ** 2
        eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
        y = np.linalg.solve(chol, eye)
        Ainv = np.swapaxes(y, -1, -2) @ y
        return cls(A=A, Ainv=Ainv, detA=detA)

    @property
    def norm(self) -> np.ndarray:
        n = self.A.shape[-1]
        return FOUR_PI ** (-n / 2) / np.sqrt(self.detA)


def gauss_eval(g: GaussData, w) -> float | np.ndarray:
    """``(4π)^{-N/2} det(A)^{-1/2} exp(-wᵀA⁻¹w/4)``; ``w`` may be a batch ``(..., N)``."""
    w = np.asarray(w, dtype=float)
    n = g.A.shape[0]
    quad = np.einsum("...i,ij,...j->...", w, g.Ainv, w)
    out = FOUR_PI ** (-n / 2) / math.sqrt(g.detA) * np.exp(-0.25 * quad)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Hermite-type polynomials: ∂^γ G = H_γ G


@dataclass(frozen=True)
class HermitePoly:
    """``Σ coef[δ] w^δ``; coefficients may be arrays over a batch of centers."""

    gamma: tuple[int, ...]
    coefs: Mapping[tuple[int, ...], object]

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        acc = 0.0
        for delta, c in self.coefs.items():
            acc = acc + c * np.prod(w ** np.asarray(delta), axis=-1)
        return acc

    @property
    def degree(self) -> int:
        return max((sum(d) for d, c in self.coefs.items() if np.any(c != 0)), default=-1)


def _hermite_table(gammas, Ainv: np.ndarray) -> dict:
    """``γ -> {δ: coef}`` with coefficients shaped like ``Ainv[..., 0, 0]``."""
    n = Ainv.shape[-1]
    zero = (0,) * n
    one = np.ones(Ainv.shape[:-2])
    table = {zero: {zero: one}}

    def build(gamma):
        if gamma in table:
            return table[gamma]
        i = next(ax for ax, g in enumerate(gamma) if g > 0)
        parent = tuple(g - (ax == i) for ax, g in enumerate(gamma))
        H = build(parent)
        out: dict = {}
        for delta, c in H.items():
            # derivative in w_i
            if delta[i] > 0:
                d2 = tuple(d - (ax == i) for ax, d in enumerate(delta))
                out[d2] = out.get(d2, 0.0) + delta[i] * c
            # -1/2 (A^{-1} w)_i H
            for j in range(n):
                d2 = tuple(d + (ax == j) for ax, d in enumerate(delta))
                out[d2] = out.get(d2, 0.0) - 0.5 * Ainv[..., i, j] * c
        table[gamma] = out
        return out

    for g in gammas:
        build(tuple(g))
    return table


def hermite_apply(gamma, g: GaussData) -> HermitePoly:
    """Polynomial ``H_γ`` with ``∂_w^γ G(z; w) = H_γ(w) G(z; w)``."""
    gamma = tuple(int(v) for v in gamma)
    table = _hermite_table([gamma], np.asarray(g.Ainv))
    coefs = {d: float(c) for d, c in table[gamma].items() if c != 0}
    return HermitePoly(gamma, coefs)


# --------------------------------------------------------------------------
# kernel polynomials


@dataclass(frozen=True)
class KernelPoly:
    """``Σ coef · (x-z)^α (x-y)^β`` for one center."""

    ell: int
    terms: Mapping[tuple[tuple[int, ...], tuple[int, ...]], float]

    def __call__(self, xz, xy) -> float | np.ndarray:
        xz = np.asarray(xz, dtype=float)
        xy = np.asarray(xy, dtype=float)
        acc = 0.0
        for (al, be), c in self.terms.items():
            acc = acc + c * np.prod(xz ** np.asarray(al), axis=-1) * np.prod(xy ** np.asarray(be), axis=-1)
        return acc

    def degrees(self) -> tuple[int, int]:
        if not self.terms:
            return (-1, -1)
        return (max(sum(a) for a, _ in self.terms), max(sum(b) for _, b in self.terms))

    def to_json(self) -> dict:
        return {
            "ell": self.ell,
            "terms": [
                {"alpha": list(a), "beta": list(b), "coef": float(c)} for (a, b), c in sorted(self.terms.items())
            ],
        }


def _parity_indices(dim: int, order: int):
    """Multi-indices δ with ``|δ| ≤ order`` and ``|δ| ≡ order (mod 2)``."""
    out = []
    for delta in product(range(order + 1), repeat=dim):
        s = sum(delta)
        if s <= order and (order - s) % 2 == 0:
            out.append(delta)
    return out


class KernelExpansion:
    """Compiled order-μ expansion of one operator, evaluable at many centers.

    Coefficient tables are cached per quantized center, so rules that reuse
    centers (``z = x`` on a product grid, midpoints on a uniform grid) only pay
    for distinct centers.
    """

    def __init__(self, spec: OperatorSpec, mu: int, quantum: float = 1e-12):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.spec = spec
        self.mu = mu
        self.quantum = quantum
        self.ops = [assemble_P_ell(spec, ell) for ell in range(mu + 1)]
        n = spec.dim
        keys: dict = {}
        for op in self.ops:
            for beta, gamma in op.terms:
                for delta in _parity_indices(n, sum(gamma)):
                    keys.setdefault((beta, delta), len(keys))
        self.term_keys = list(keys)
        self._index = keys
        self.exp_u = np.array([k[0] for k in self.term_keys], dtype=np.int64).reshape(len(keys), n)
        self.exp_v = np.array([k[1] for k in self.term_keys], dtype=np.int64).reshape(len(keys), n)
        self._atoms = [sorted(op.atoms()) for op in self.ops]
        self._gammas = sorted({g for op in self.ops for _, g in op.terms})
        self._cache: dict = {}
        self._lock = threading.Lock()

    # per-center tables ---------------------------------------------------

    def _compute(self, Z: np.ndarray):
        """Tables for centers ``Z (U, N)``: coefs ``(U, μ+1, T)``, ``Ainv``, ``norm``."""
        spec = self.spec
        U = Z.shape[0]
        gb = GaussBatch.from_matrices(spec.diffusion_matrix(Z), gamma=spec.gamma)
        herm = _hermite_table(self._gammas, gb.Ainv)
        coef = np.zeros((U, self.mu + 1, len(self.term_keys)))
        for ell, op in enumerate(self.ops):
            vals = spec.atom_values(self._atoms[ell], Z)
            for (beta, gamma), c in op.terms.items():
                cval = np.broadcast_to(np.asarray(c.evaluate(vals), dtype=float), (U,))
                for delta, h in herm[gamma].items():
                    coef[:, ell, self._index[(beta, delta)]] += cval * h
        if not np.all(np.isfinite(coef)):
            raise KernelError("non-finite kernel coefficients")
        return coef, gb.Ainv, gb.norm

    def tables(self, Z: np.ndarray):
        """Unique-center tables plus the inverse index mapping each row of ``Z`` to them."""
        Z = np.asarray(Z, dtype=float).reshape(-1, self.spec.dim)
        keys = np.round(Z / self.quantum).astype(np.int64)
        if keys.shape[1] == 1:
            uniq, first, inverse = np.unique(keys[:, 0], return_index=True, return_inverse=True)
            uniq = uniq[:, None]
        else:
            uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        with self._lock:
            missing = [i for i, k in enumerate(map(tuple, uniq)) if k not in self._cache]
            if missing:
                coef, ainv, norm = self._compute(Z[first[missing]])
                for row, i in enumerate(missing):
                    self._cache[tuple(uniq[i])] = (coef[row], ainv[row], norm[row])
            rows = [self._cache[tuple(k)] for k in uniq]
        coef = np.stack([r[0] for r in rows])
        ainv = np.stack([r[1] for r in rows])
        norm = np.array([r[2] for r in rows])
        return coef, ainv, norm, inverse

    def kernel_poly(self, ell: int, z) -> KernelPoly:
        """Kernel polynomial of order ``ell`` at a single center."""
        if not 0 <= ell <= self.mu:
            raise ValueError(f"ell must lie in 0..{self.mu}")
        coef, _, _, _ = self.tables(np.asarray(z, dtype=float)[None])
        terms = {k: float(coef[0, ell, i]) for i, k in enumerate(self.term_keys) if coef[0, ell, i] != 0}
        return KernelPoly(ell, terms)

    # evaluation ---------------------------------------------------------

    def evaluate(self, t: float, x, y, rule: "CenterRule", backend: str | None = None) -> np.ndarray:
        """Approximate kernel at pairs ``x[p], y[p]`` (each ``(P, N)``)."""
        if not t > 0:
            raise ValueError("t must be positive")
        n = self.spec.dim
        x = np.asarray(x, dtype=float).reshape(-1, n)
        y = np.asarray(y, dtype=float).reshape(-1, n)
        z = rule(x, y)
        coef, ainv, norm, inverse = self.tables(z)
        s = math.sqrt(t)
        powers = s ** np.arange(self.mu + 1)
        flat = np.einsum("uet,e->ut", coef, powers)
        u = (x - z) / s
        v = (x - y) / s
        out = _kernels.poly_gauss(u, v, inverse, flat, self.exp_u, self.exp_v, ainv, norm, backend=backend)
        out *= s ** (-n)
        if not np.all(np.isfinite(out)):
            raise KernelError("non-finite kernel value")
        return out


_EXPANSIONS: dict = {}
_EXP_LOCK = threading.Lock()


def expansion(spec: OperatorSpec, mu: int) -> KernelExpansion:
    key = (spec, mu)
    with _EXP_LOCK:
        if key not in _EXPANSIONS:
            _EXPANSIONS[key] = KernelExpansion(spec, mu)
        return _EXPANSIONS[key]


def frak_P(spec: OperatorSpec, ell: int, z) -> KernelPoly:
    """Kernel polynomial of order ``ell`` at center ``z``; ``frakP^0 = 1``."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    return expansion(spec, ell).kernel_poly(ell, z)


# --------------------------------------------------------------------------
# center rules


@dataclass(frozen=True)
class CenterRule:
    """Admissible center map ``(x, y) -> z`` with ``z(x, x) = x``.

    ``tag`` is ``"x"``, ``"midpoint"``, ``"affine"`` (``z = λx + (1-λ)y``) or
    ``"geometric"`` (componentwise ``√(xy)``, positive orthant only).
    """

    tag: str = "x"
    lam: float = 1.0

    def __post_init__(self):
        if self.tag not in ("x", "midpoint", "affine", "geometric"):
            raise ValueError(f"unknown center rule {self.tag!r}")

    @classmethod
    def from_json(cls, doc) -> "CenterRule":
        if isinstance(doc, str):
            return cls(doc)
        return cls(doc.get("rule", "x"), float(doc.get("lambda", 1.0)))

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.tag == "x":
            return np.array(np.broadcast_to(x, np.broadcast_shapes(x.shape, y.shape)))
        if self.tag == "midpoint":
            return 0.5 * (x + y)
        if self.tag == "affine":
            # written as a correction to x so that z(x, x) = x exactly
            return x + (1.0 - self.lam) * (y - x)
        if np.any(x <= 0) or np.any(y <= 0):
            raise KernelError("geometric center requires points in the positive orthant")
        return np.sqrt(x * y)

    def __str__(self):
        return f"affine({self.lam})" if self.tag == "affine" else self.tag


BUILTIN_RULES = (CenterRule("x"), CenterRule("midpoint"), CenterRule("affine", 0.3), CenterRule("geometric"))


def approx_kernel(spec: OperatorSpec, mu: int, rule: CenterRule, t: float, x, y) -> float:
    """Order-``mu`` approximate kernel at one ``(t, x, y)``."""
    return float(expansion(spec, mu).evaluate(t, x, y, rule)[0])


# --------------------------------------------------------------------------
# applying the kernel on a grid


def gaussian_reach(t: float, lam_max: float, tail: float = 1e-18) -> float:
    """Distance beyond which ``exp(-r²/(4 t λ))`` drops below ``tail`` (with polynomial slack)."""
    return math.sqrt(4.0 * t * lam_max * (math.log(1.0 / tail) + 6.0))


def _pair_offsets(grid: Grid, radius: float):
    # offsets beyond the grid extent would wrap around in the slicing below
    return [min(int(math.ceil(radius / h)), k - 1) for h, k in zip(grid.h, grid.shape)]


def kernel_matrix(spec: OperatorSpec, mu: int, rule: CenterRule, t: float, grid: Grid, backend=None):
    """Sparse quadrature-ready kernel matrix ``K[i, j] = G^{[μ,z]}_t(x_i, y_j)``."""
    from scipy import sparse

    pts = grid.flat_points()
    lam_max = float(np.max(np.linalg.eigvalsh(spec.diffusion_matrix(pts))))
    radius = gaussian_reach(t, lam_max)
    spans = _pair_offsets(grid, radius)
    shape = grid.shape
    idx = np.arange(grid.size).reshape(shape)
    rows, cols = [], []
    for off in product(*(range(-s, s + 1) for s in spans)):
        src = tuple(slice(max(0, -o), k - max(0, o)) for o, k in zip(off, shape))
        dst = tuple(slice(max(0, o), k - max(0, -o)) for o, k in zip(off, shape))
        r = idx[src].ravel()
        if r.size == 0:
            continue
        rows.append(r)
        cols.append(idx[dst].ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = expansion(spec, mu).evaluate(t, pts[rows], pts[cols], rule, backend=backend)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def apply_kernel(spec: OperatorSpec, mu: int, rule: CenterRule, t: float, f, grid: Grid, backend=None) -> np.ndarray:
    """Trapezoidal quadrature of ``∫ G^{[μ,z]}_t(x, y) f(y) dy`` at every grid node."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"f has shape {f.shape}, grid has shape {grid.shape}")
    _check_margin(spec, t, f, grid)
    K = kernel_matrix(spec, mu, rule, t, grid, backend=backend)
    out = K @ (f * grid.trapezoid_weights()).ravel()
    return out.reshape(grid.shape)


class MarginWarning(UserWarning):
    pass


def _check_margin(spec: OperatorSpec, t, f, grid: Grid):
    mag = np.abs(f)
    if not np.any(mag > 0):
        return
    support = mag > 1e-14 * mag.max()
    pts = grid.points()[support]
    lam = float(np.max(np.linalg.eigvalsh(spec.diffusion_matrix(grid.flat_points()))))
    need = 8.0 * math.sqrt(t * lam)
    margin = min(
        min(pts[:, i].min() - grid.lower[i], grid.upper[i] - pts[:, i].max()) for i in range(grid.dim)
    )
    if margin < need:
        bound = math.exp(-max(margin, 0.0) ** 2 / (4.0 * t * lam))
        warnings.warn(
            f"grid margin {margin:.3g} is below 8*sqrt(t*maxEig(A)) = {need:.3g}; "
            f"estimated relative truncation up to {bound:.2e}",
            MarginWarning,
            stacklevel=3,
        )
