"""Kernel placement: Poisson-disk centres and the uniform initial radius."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .kernel_field import KernelField
from .matrix_kernels import KernelKind

logger = logging.getLogger(__name__)

PACKING_FACTOR = 1.4


@dataclass
class InitConfig:
    lo: tuple
    hi: tuple
    n_kernels: int
    eta: float = 6.0
    attempts: int = 30
    seed: int = 0

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        if len(self.lo) != len(self.hi) or len(self.lo) not in (2, 3):
            raise ValueError("domain corners must both be 2D or 3D")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("domain box is degenerate")
        if self.n_kernels < 1:
            raise ValueError("need at least one kernel")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def dim(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator; independent streams for init, training and probes are
    derived from one seed through ``SeedSequence.spawn`` order."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    return np.random.Generator(np.random.PCG64(ss.spawn(stream + 1)[stream]))


def ball_radius(n, volume, d):
    """Radius of a ball whose ``n`` copies fill ``volume``."""
    return (math.gamma(1 + d / 2) * volume / (n * math.pi ** (d / 2))) ** (1.0 / d)


def init_radii(n, volume, d, eta):
    if n <= 0 or volume <= 0 or eta <= 0:
        raise ValueError("n, volume and eta must be positive")
    return eta * ball_radius(n, volume, d)


def poisson_disk(lo, hi, r_min, k=30, seed=0, rng=None):
    """Bridson's fast Poisson-disk sampling in an axis-aligned box.

    Returns an (n, d) array whose pairwise distances are all >= ``r_min``.
    """
    if r_min <= 0:
        raise ValueError("r_min must be positive")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = len(lo)
    if rng is None:
        rng = make_rng(seed)
    cell = r_min / math.sqrt(d)
    shape = np.maximum(np.ceil((hi - lo) / cell).astype(np.int64), 1)
    grid = -np.ones(tuple(shape), dtype=np.int64)
    reach = int(math.ceil(r_min / cell))
    offsets = np.array(list(itertools.product(range(-reach, reach + 1), repeat=d)), dtype=np.int64)

    def cell_of(p):
        return np.minimum(((p - lo) / cell).astype(np.int64), shape - 1)

    samples = [lo + rng.random(d) * (hi - lo)]
    grid[tuple(cell_of(samples[0][None])[0])] = 0
    active = [0]
    r2 = r_min * r_min
    pts = np.empty((64, d))
    pts[0] = samples[0]
    while active:
        slot = int(rng.integers(len(active)))
        base = pts[active[slot]]
        # uniform in the annulus [r, 2r]
        dirs = rng.normal(size=(k, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = r_min * (1.0 + rng.random(k) * ((2.0 ** d) - 1.0)) ** (1.0 / d)
        cand = base + dirs * rad[:, None]
        ok = np.all((cand >= lo) & (cand < hi), axis=1)
        accepted = -1
        if ok.any():
            cj = np.nonzero(ok)[0]
            nb = cell_of(cand[cj])[:, None, :] + offsets[None]
            valid = np.all((nb >= 0) & (nb < shape), axis=2)
            idx = np.where(valid, grid[tuple(np.clip(nb, 0, shape - 1).transpose(2, 0, 1))], -1)
            diff = pts[np.maximum(idx, 0)] - cand[cj][:, None, :]
            close = (idx >= 0) & (np.einsum("ijk,ijk->ij", diff, diff) < r2)
            free = ~close.any(axis=1)
            if free.any():
                accepted = int(cj[np.argmax(free)])
        if accepted < 0:
            active[slot] = active[-1]
            active.pop()
            continue
        n = len(samples)
        if n == len(pts):
            pts = np.concatenate([pts, np.empty_like(pts)])
        pts[n] = cand[accepted]
        samples.append(cand[accepted])
        grid[tuple(cell_of(cand[accepted][None])[0])] = n
        active.append(n)
    return pts[: len(samples)].copy()


def calibrated_poisson_disk(cfg: InitConfig, tolerance=0.2, max_iter=30):
    """Poisson-disk centres whose count lands within ``tolerance`` of the request."""
    d = cfg.dim
    target = cfg.n_kernels
    # maximal Poisson-disk sets pack at roughly 1.4x the ball-filling radius
    r = PACKING_FACTOR * ball_radius(target, cfg.volume, d)
    lo_r, hi_r = None, None
    best = None
    for it in range(max_iter):
        pts = poisson_disk(cfg.lo, cfg.hi, r, cfg.attempts, rng=make_rng(cfg.seed, 0))
        n = len(pts)
        if best is None or abs(n - target) < abs(len(best) - target):
            best = pts
        if abs(n - target) <= tolerance * target:
            logger.debug("poisson-disk calibration: %d samples after %d passes", n, it + 1)
            return pts
        if n > target:
            lo_r = r
        else:
            hi_r = r
        if lo_r is not None and hi_r is not None:
            r = math.sqrt(lo_r * hi_r)
        else:
            r *= (n / target) ** (1.0 / d)
    logger.warning("poisson-disk calibration stopped at %d samples for a request of %d", len(best), target)
    return best


def init_field(cfg: InitConfig, kind: KernelKind, frames: int = 1, frame_dt: float = 1.0) -> KernelField:
    centers = calibrated_poisson_disk(cfg)
    h = init_radii(len(centers), cfg.volume, cfg.dim, cfg.eta)
    return KernelField.zeros(kind, centers, np.full(len(centers), h), frames, frame_dt)
