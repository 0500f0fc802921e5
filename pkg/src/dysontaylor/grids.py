from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid, ``n[i]`` nodes on ``[lower[i], upper[i]]`` including both ends."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if not (len(lo) == len(hi) == len(n)):
            raise ValueError("lower, upper and n must have the same length")
        if any(k < 3 for k in n):
            raise ValueError("each axis needs at least 3 nodes")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("upper bound must exceed lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_spacing(cls, lower, upper, h) -> "Grid":
        lower, upper = np.atleast_1d(lower), np.atleast_1d(upper)
        n = np.rint((upper - lower) / h).astype(int) + 1
        return cls(tuple(lower), tuple(lower + (n - 1) * h), tuple(n))

    @classmethod
    def from_json(cls, doc) -> "Grid":
        if "h" in doc:
            return cls.from_spacing(doc["lower"], doc["upper"], float(doc["h"]))
        return cls(tuple(doc["lower"]), tuple(doc["upper"]), tuple(doc["n"]))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (k - 1) for a, b, k in zip(self.lower, self.upper, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, k) for a, b, k in zip(self.lower, self.upper, self.n)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*n, N)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(-1, self.dim)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.ones(self.n)
        for axis, (k, h) in enumerate(zip(self.n, self.h)):
            wa = np.full(k, h)
            wa[0] = wa[-1] = h / 2
            shape = [1] * self.dim
            shape[axis] = k
            w = w * wa.reshape(shape)
        return w

    def cell_volume(self) -> float:
        return float(np.prod(self.h))


Grid1D = Grid
Grid2D = Grid
