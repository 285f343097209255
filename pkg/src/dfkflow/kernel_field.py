"""Kernel-sum velocity fields with compact-support neighbour queries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse

from .matrix_kernels import Kind, KernelKind, PairEval, _close_trace, vorticity_from_jacobian


DENSE_LIMIT = 1 << 20


class HashGrid:
    """Uniform grid mapping integer cells to the kernels whose support box overlaps them.

    ``cell_size`` defaults to the largest radius, so a support box spans at most
    three cells per axis and a query only inspects the cell holding the point.
    """

    def __init__(self, centers, radii, cell_size=None):
        centers = np.asarray(centers, dtype=float)
        radii = np.asarray(radii, dtype=float)
        self.dim = centers.shape[1]
        n = len(radii)
        rmax = float(radii.max()) if n else 1.0
        self.cell_size = float(cell_size) if cell_size is not None else rmax
        if self.cell_size < rmax:
            raise ValueError("cell size must be at least the largest kernel radius")
        if n == 0:
            self.origin = np.zeros(self.dim)
            self.shape = np.ones(self.dim, dtype=np.int64)
            self._keys = np.zeros(0, dtype=np.int64)
            self._starts = np.zeros(1, dtype=np.int64)
            self._kernels = np.zeros(0, dtype=np.int64)
            return
        lo_box = centers - radii[:, None]
        hi_box = centers + radii[:, None]
        self.origin = lo_box.min(axis=0)
        lo = np.floor((lo_box - self.origin) / self.cell_size).astype(np.int64)
        hi = np.floor((hi_box - self.origin) / self.cell_size).astype(np.int64)
        self.shape = hi.max(axis=0) + 1
        span = int((hi - lo).max()) + 1
        cells, owners = [], []
        for off in itertools.product(range(span), repeat=self.dim):
            c = lo + np.array(off, dtype=np.int64)
            ok = np.all(c <= hi, axis=1)
            cells.append(c[ok])
            owners.append(np.nonzero(ok)[0])
        cells = np.concatenate(cells)
        owners = np.concatenate(owners)
        keys = np.ravel_multi_index(tuple(cells.T), tuple(self.shape))
        order = np.lexsort((owners, keys))
        keys, owners = keys[order], owners[order]
        self._keys, starts = np.unique(keys, return_index=True)
        self._starts = np.append(starts, len(keys)).astype(np.int64)
        self._kernels = owners

    def cell_of(self, points):
        return np.floor((np.asarray(points, dtype=float) - self.origin) / self.cell_size).astype(np.int64)

    def candidates(self, points):
        """All (point, kernel) pairs sharing a cell, sorted by point then kernel."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self.cell_of(points)
        inside = np.all((cells >= 0) & (cells < self.shape), axis=1)
        keys = np.full(len(points), -1, dtype=np.int64)
        if inside.any():
            keys[inside] = np.ravel_multi_index(tuple(cells[inside].T), tuple(self.shape))
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, max(len(self._keys) - 1, 0))
        found = inside & (len(self._keys) > 0)
        if len(self._keys):
            found &= self._keys[pos] == keys
        start = np.where(found, self._starts[pos], 0)
        count = np.where(found, self._starts[np.minimum(pos + 1, len(self._starts) - 1)] - start, 0)
        pt = np.repeat(np.arange(len(points)), count)
        first = np.repeat(start - np.cumsum(count) + count, count)
        k = self._kernels[first + np.arange(len(pt))] if len(pt) else np.zeros(0, dtype=np.int64)
        return pt, k


def build_hash_grid(field: "KernelField") -> HashGrid:
    return HashGrid(field.centers, field.radii)


def query_support(grid: HashGrid, point, centers=None, radii=None) -> list:
    """Kernel indices whose support may contain ``point`` (exact when geometry is given)."""
    _, k = grid.candidates(np.asarray(point, dtype=float)[None])
    if centers is not None:
        off = np.asarray(point, dtype=float) - np.asarray(centers)[k]
        k = k[np.einsum("ij,ij->i", off, off) < np.asarray(radii)[k] ** 2]
    return sorted(int(i) for i in k)


@dataclass
class PairSet:
    """Influencing (point, kernel) pairs for a point set, with their kernel evaluator."""

    points: np.ndarray
    pt: np.ndarray
    k: np.ndarray
    ev: PairEval
    n_kernels: int = 0
    # use a cached sparse velocity operator (fixed geometry, weights-only work)
    linear: bool = False
    _op: object = dc_field(default=None, repr=False)

    @property
    def n_points(self):
        return len(self.points)

    def operator(self):
        """Sparse (P d, N w) matrix mapping flattened weights to flattened velocities."""
        if self._op is None:
            d = self.ev.d
            w = self.ev.kk.weight_width(d)
            rows, cols, vals = [], [], []
            for j in range(w):
                e = np.zeros(w)
                e[j] = 1.0
                u = self.ev.velocity(np.broadcast_to(e, (len(self.k), w)))
                for i in range(d):
                    rows.append(self.pt * d + i)
                    cols.append(self.k * w + j)
                    vals.append(u[:, i])
            shape = (self.n_points * d, self.n_kernels * w)
            self._op = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                         shape=shape)
        return self._op

    def apply(self, weights):
        """Velocities (F, P, d) for weights (F, N, w) through the sparse operator."""
        F = weights.shape[0]
        out = self.operator() @ weights.reshape(F, -1).T
        return out.T.reshape(F, self.n_points, self.ev.d)

    def apply_adjoint(self, g):
        """Weight gradients (F, N, w) for velocity gradients (F, P, d)."""
        F = g.shape[0]
        w = self.ev.kk.weight_width(self.ev.d)
        out = self.operator().T @ g.reshape(F, -1).T
        return out.T.reshape(F, self.n_kernels, w)

    def counts(self):
        return np.bincount(self.pt, minlength=self.n_points)


def scatter(index, values, n):
    """Sum rows of ``values`` (M, ...) into ``n`` bins along axis 0, in fixed order."""
    values = np.asarray(values)
    tail = values.shape[1:]
    flat = values.reshape(len(values), int(np.prod(tail, dtype=np.int64)))
    out = np.empty((n, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.bincount(index, weights=flat[:, j], minlength=n)
    return out.reshape((n,) + tail)


@dataclass
class KernelField:
    """Sum of ``N`` kernels with shared geometry and ``F`` per-frame weight sets.

    ``weights`` has shape (F, N, w) with ``w = dim`` (or 1 for the 2D curl kernel).
    """

    kind: KernelKind
    centers: np.ndarray
    radii: np.ndarray
    weights: np.ndarray
    frame_dt: float = 1.0
    _grid_cache: tuple | None = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=float)
        self.radii = np.ascontiguousarray(self.radii, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 2:
            w = w[None]
        self.weights = np.ascontiguousarray(w)
        n, d = self.centers.shape
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if len(self.radii) != n:
            raise ValueError("one radius per kernel required")
        if np.any(self.radii <= 0):
            raise ValueError("kernel radii must be positive")
        expected = (n, self.kind.weight_width(d))
        if self.weights.shape[1:] != expected or self.weights.shape[0] < 1:
            raise ValueError(f"weights must have shape (F, {expected[0]}, {expected[1]}), got {self.weights.shape}")
        if self.frame_dt <= 0:
            raise ValueError("frame_dt must be positive")

    @classmethod
    def zeros(cls, kind, centers, radii, frames=1, frame_dt=1.0):
        centers = np.asarray(centers, dtype=float)
        w = kind.weight_width(centers.shape[1])
        return cls(kind, centers, radii, np.zeros((frames, len(centers), w)), frame_dt)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_kernels(self) -> int:
        return len(self.radii)

    @property
    def n_frames(self) -> int:
        return self.weights.shape[0]

    def copy(self, kind=None, weights=None):
        return KernelField(kind or self.kind, self.centers.copy(), self.radii.copy(),
                           (self.weights if weights is None else weights).copy(), self.frame_dt)

    def grid(self) -> HashGrid:
        key = (self.centers.tobytes(), self.radii.tobytes())
        if self._grid_cache is None or self._grid_cache[0] != key:
            self._grid_cache = (key, HashGrid(self.centers, self.radii))
        return self._grid_cache[1]

    def pair_set(self, points, fast=True) -> PairSet:
        """Exact influencing pairs (``|p - c| < h``), sorted by point then kernel."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"points must have dimension {self.dim}")
        if self.kind.base.compact and len(points) * self.n_kernels <= DENSE_LIMIT:
            # small batches: a dense distance test beats (re)building the grid
            pt, k = self._dense_candidates(points)
        elif self.kind.base.compact:
            pt, k = self.grid().candidates(points)
        else:
            pt = np.repeat(np.arange(len(points)), self.n_kernels)
            k = np.tile(np.arange(self.n_kernels), len(points))
        off = points[pt] - self.centers[k]
        keep = np.einsum("ij,ij->i", off, off) < self.radii[k] ** 2
        if not self.kind.base.compact:
            keep[:] = True
        pt, k, off = pt[keep], k[keep], off[keep]
        return PairSet(points, pt, k, PairEval(self.kind, off, self.radii[k], fast=fast), self.n_kernels)

    def _dense_candidates(self, points):
        d2 = (np.einsum("ij,ij->i", points, points)[:, None] - 2.0 * points @ self.centers.T
              + np.einsum("ij,ij->i", self.centers, self.centers)[None, :])
        # loose bound; the exact test follows in pair_set
        slack = 1e-9 * (1.0 + np.abs(d2).max(initial=0.0))
        return np.nonzero(d2 < self.radii[None, :] ** 2 + slack)

    def _check_frame(self, frame):
        if not 0 <= frame < self.n_frames:
            raise IndexError(f"frame {frame} out of range for {self.n_frames} frames")

    # weights per pair, optionally for all frames at once
    def pair_weights(self, ps: PairSet, frame=None):
        if frame is None:
            return self.weights[:, ps.k]
        self._check_frame(frame)
        return self.weights[frame, ps.k]

    def velocity(self, ps: PairSet, frame=None):
        """(P, d) for one frame, (F, P, d) when ``frame`` is None."""
        if ps.linear:
            if frame is None:
                return ps.apply(self.weights)
            self._check_frame(frame)
            return ps.apply(self.weights[frame][None])[0]
        contrib = ps.ev.velocity(self.pair_weights(ps, frame))
        return _gather(ps, contrib, frame)

    def jacobian(self, ps: PairSet, frame=None):
        contrib = ps.ev.jacobian(self.pair_weights(ps, frame))
        J = _gather(ps, contrib, frame)
        # summation order breaks the per-kernel zero trace by rounding; restore it
        return _close_trace(J) if self.kind.divergence_free else J

    def divergence(self, ps: PairSet, frame=None):
        contrib = ps.ev.divergence(self.pair_weights(ps, frame))
        return _gather(ps, contrib, frame)

    def vorticity(self, ps: PairSet, frame=None):
        contrib = ps.ev.vorticity(self.pair_weights(ps, frame))
        return _gather(ps, contrib, frame)


def _gather(ps: PairSet, contrib, frame):
    if frame is not None:
        return scatter(ps.pt, contrib, ps.n_points)
    moved = np.moveaxis(contrib, 0, 1)
    return np.moveaxis(scatter(ps.pt, moved, ps.n_points), 1, 0)


CHUNK = 8192


def _chunked(field: KernelField, frame: int, points, method: str):
    field._check_frame(frame)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    parts = [getattr(field, method)(field.pair_set(points[i:i + CHUNK]), frame)
             for i in range(0, len(points), CHUNK)]
    if not parts:
        return getattr(field, method)(field.pair_set(points), frame)
    return np.concatenate(parts)


def evaluate_velocity(field: KernelField, frame: int, points):
    return _chunked(field, frame, points, "velocity")


def evaluate_jacobian(field: KernelField, frame: int, points):
    return _chunked(field, frame, points, "jacobian")


def evaluate_divergence(field: KernelField, frame: int, points):
    return _chunked(field, frame, points, "divergence")


def evaluate_vorticity(field: KernelField, frame: int, points):
    return _chunked(field, frame, points, "vorticity")


def evaluate_velocity_bruteforce(field: KernelField, frame: int, points):
    """O(N P) reference summation without the hash grid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((len(points), field.dim))
    for i in range(field.n_kernels):
        off = points - field.centers[i]
        ev = PairEval(field.kind, off, np.full(len(points), field.radii[i]))
        u = ev.velocity(np.broadcast_to(field.weights[frame, i], (len(points), field.weights.shape[2])))
        out += np.where((np.einsum("ij,ij->i", off, off) < field.radii[i] ** 2)[:, None] | (not field.kind.base.compact), u, 0.0)
    return out


def divergence_fd(field: KernelField, frame: int, point, step: float = 1e-5) -> float:
    """Central-difference divergence estimate at one point."""
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float)
    d = field.dim
    probes = np.concatenate([point + step * np.eye(d), point - step * np.eye(d)])
    u = evaluate_velocity(field, frame, probes)
    return float(sum((u[i, i] - u[d + i, i]) / (2 * step) for i in range(d)))


def curl_fd(field: KernelField, frame: int, points, step: float = 1e-5):
    """Central-difference vorticity at each point (scalar in 2D, vector in 3D)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = field.dim
    J = np.empty((len(points), d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        J[:, :, j] = (evaluate_velocity(field, frame, points + e) - evaluate_velocity(field, frame, points - e)) / (2 * step)
    return vorticity_from_jacobian(J)


def decompose(field: KernelField):
    """Split a ``-Laplacian phi I`` field into its curl-free and divergence-free parts.

    Both parts share geometry and weights with the input; ``curlfree + divfree``
    reproduces the input pointwise.
    """
    if field.kind.kind is not Kind.NEGLAP:
        raise ValueError(f"decompose needs a neglap field, got {field.kind}")
    base = field.kind.base
    curlfree = field.copy(kind=KernelKind(Kind.CURLFREE, base))
    divfree = field.copy(kind=KernelKind(Kind.DIVFREE, base))
    return curlfree, divfree
