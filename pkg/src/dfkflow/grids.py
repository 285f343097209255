"""Vertex-centred regular grids.

Node ``i`` along an axis sits at ``lo + i (hi - lo) / (n - 1)``.  In memory a
grid of ``C`` channels is an array of shape ``(nx, ny[, nz], C)`` indexed
``[i, j(, k)]``; :meth:`GridField.points` lists nodes in the same (C) order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def grid_points(lo, hi, shape):
    axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class GridField:
    data: np.ndarray
    lo: tuple
    hi: tuple

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        d = len(self.lo)
        if d not in (2, 3) or len(self.hi) != d:
            raise ValueError("grids are 2D or 3D")
        if self.data.ndim != d + 1:
            raise ValueError(f"expected data of rank {d + 1} (spatial axes plus channels)")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("bounding box min must be below max on every axis")

    @classmethod
    def from_values(cls, values, shape, lo, hi):
        values = np.asarray(values)
        return cls(values.reshape(tuple(shape) + (-1,)), lo, hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def shape(self):
        return self.data.shape[:-1]

    @property
    def channels(self):
        return self.data.shape[-1]

    @property
    def spacing(self):
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.lo, self.hi, self.shape))

    def points(self):
        return grid_points(self.lo, self.hi, self.shape)

    def values(self):
        return self.data.reshape(-1, self.channels)

    def slice2d(self, axis=2, index=None):
        """2D cut of a 3D grid (normal ``axis``, default the middle node); 2D grids pass through."""
        if self.dim == 2:
            return self.data
        if not 0 <= axis < 3:
            raise ValueError("slice axis must be 0, 1 or 2")
        n = self.shape[axis]
        index = n // 2 if index is None else index
        if not 0 <= index < n:
            raise ValueError(f"slice index {index} outside [0, {n})")
        return np.take(self.data, index, axis=axis)
