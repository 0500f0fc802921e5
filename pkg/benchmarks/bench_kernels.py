"""Compare the numba and numpy implementations of the kernel hot loop.

Usage: ``python3 benchmarks/bench_kernels.py [--pairs N] [--repeat R]``.
Times the polynomial-times-Gaussian evaluation on the pairs of a 1D and a 2D
kernel matrix and reports the speed-up together with the largest relative
deviation between the two backends.
"""
import argparse
import time

import numpy as np

from dysontaylor import _kernels
from dysontaylor.dyson import OperatorSpec
from dysontaylor.kernel import CenterRule, expansion

CASES = {
    "1d mu=3": (OperatorSpec.from_strings([["1 + 0.25*sin(x1)"]], ["x1/4"], "-1/2", gamma=0.75), 3),
    "2d mu=2": (
        OperatorSpec.from_strings(
            [["1 + 0.25*sin(x1)", "0.1*cos(x2)"], ["0.1*cos(x2)", "1 + 0.25*cos(x1)"]], gamma=0.5
        ),
        2,
    ),
}


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pairs", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'case':<10} {'pairs':>8} {'numpy [s]':>10} {'numba [s]':>10} {'speed-up':>9} {'max rel dev':>12}")
    for name, (spec, mu) in CASES.items():
        n = spec.dim
        x = rng.uniform(-2, 2, size=(args.pairs, n))
        y = x + 0.2 * rng.normal(size=(args.pairs, n))
        rule = CenterRule("midpoint")
        exp = expansion(spec, mu)
        z = rule(x, y)
        coef, ainv, norm, inverse = exp.tables(z)
        s = 0.1
        flat = np.einsum("uet,e->ut", coef, s ** np.arange(mu + 1))
        u, v = (x - z) / s, (x - y) / s
        call = (u, v, inverse, flat, exp.exp_u, exp.exp_v, ainv, norm)
        # first call compiles
        _kernels.poly_gauss_numba(u[:10], v[:10], inverse[:10], *call[3:])
        t_np, a = _best(lambda: _kernels.poly_gauss_numpy(*call), args.repeat)
        t_nb, b = _best(lambda: _kernels.poly_gauss_numba(*call), args.repeat)
        dev = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
        print(f"{name:<10} {args.pairs:>8} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>8.1f}x {dev:>12.2e}")


if __name__ == "__main__":
    main()
