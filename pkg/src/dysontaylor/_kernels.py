"""Hot loops with a numba implementation and a pure-numpy fallback.

The backend is chosen once at import from ``DYSONTAYLOR_BACKEND``
(``numba`` or ``numpy``); the default is numba when it imports and
``NUMBA_DISABLE_JIT`` is not set. Both implementations stay importable so
they can be compared directly.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - exercised through BACKEND
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is too old for numba; skip straight to the portable layer
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _select_backend() -> str:
    requested = os.environ.get("DYSONTAYLOR_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ValueError(f"DYSONTAYLOR_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy"
    if not HAVE_NUMBA or os.environ.get("NUMBA_DISABLE_JIT", "0") not in ("", "0"):
        if requested == "numba":
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return "numpy"
    return "numba"


BACKEND = _select_backend()

_CHUNK = 16384


def poly_gauss_numpy(u, v, center, coef, exp_u, exp_v, ainv, norm):
    """``norm_c · exp(-vᵀ Ainv_c v / 4) · Σ_T coef[c, T] u^{exp_u[T]} v^{exp_v[T]}`` per pair.

    ``u, v``: ``(P, N)``; ``center``: ``(P,)`` row indices into the per-center
    arrays ``coef (U, T)``, ``ainv (U, N, N)``, ``norm (U,)``.
    """
    P = u.shape[0]
    out = np.empty(P)
    for start in range(0, P, _CHUNK):
        sl = slice(start, min(P, start + _CHUNK))
        uu, vv, cc = u[sl], v[sl], center[sl]
        mono = np.prod(uu[:, None, :] ** exp_u[None], axis=2) * np.prod(vv[:, None, :] ** exp_v[None], axis=2)
        poly = np.einsum("pt,pt->p", coef[cc], mono)
        quad = np.einsum("pi,pij,pj->p", vv, ainv[cc], vv)
        out[sl] = norm[cc] * np.exp(-0.25 * quad) * poly
    return out


def _poly_gauss_loop(u, v, center, coef, exp_u, exp_v, ainv, norm, out):
    P, N = u.shape
    T = coef.shape[1]
    for p in _prange(P):
        c = center[p]
        quad = 0.0
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += ainv[c, i, j] * v[p, j]
            quad += v[p, i] * acc
        poly = 0.0
        for t in range(T):
            term = coef[c, t]
            if term == 0.0:
                continue
            for i in range(N):
                eu = exp_u[t, i]
                ev = exp_v[t, i]
                for _ in range(eu):
                    term *= u[p, i]
                for _ in range(ev):
                    term *= v[p, i]
            poly += term
        out[p] = norm[c] * math.exp(-0.25 * quad) * poly


_prange = range

if HAVE_NUMBA:
    _prange = numba.prange
    _poly_gauss_jit = numba.njit(cache=True, parallel=True)(_poly_gauss_loop)
else:  # pragma: no cover
    _poly_gauss_jit = None


def poly_gauss_numba(u, v, center, coef, exp_u, exp_v, ainv, norm):
    if _poly_gauss_jit is None:
        raise RuntimeError("numba is not available")
    out = np.empty(u.shape[0])
    _poly_gauss_jit(
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(center, dtype=np.int64),
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(exp_u, dtype=np.int64),
        np.ascontiguousarray(exp_v, dtype=np.int64),
        np.ascontiguousarray(ainv, dtype=np.float64),
        np.ascontiguousarray(norm, dtype=np.float64),
        out,
    )
    return out


def poly_gauss(u, v, center, coef, exp_u, exp_v, ainv, norm, backend: str | None = None):
    backend = backend or BACKEND
    if backend == "numba":
        return poly_gauss_numba(u, v, center, coef, exp_u, exp_v, ainv, norm)
    return poly_gauss_numpy(u, v, center, coef, exp_u, exp_v, ainv, norm)


def set_threads(k: int | None) -> None:
    """Cap numba's worker pool (no-op on the numpy backend)."""
    if k and HAVE_NUMBA and BACKEND == "numba":
        numba.set_num_threads(max(1, min(int(k), numba.config.NUMBA_NUM_THREADS)))
