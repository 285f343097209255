"""Closed-form ground-truth flows and passive-scalar sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import GridField, grid_points
from .initializer import make_rng
from .losses import ObservationSet, ScalarSequence

PI = np.pi


@dataclass
class AnalyticField:
    case: str
    velocity: Callable
    lo: tuple
    hi: tuple
    vorticity_fn: Callable | None = None
    divergence_free: bool = True

    @property
    def dim(self):
        return len(self.lo)

    def __call__(self, points):
        return self.velocity(np.atleast_2d(np.asarray(points, dtype=float)))

    def vorticity(self, points, step=1e-5):
        """Closed form when available, central differences of the velocity otherwise."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.vorticity_fn is not None:
            return self.vorticity_fn(points)
        return fd_curl(self.velocity, points, step)

    def sample(self, resolution):
        shape = _shape(resolution, self.dim)
        return GridField.from_values(self(grid_points(self.lo, self.hi, shape)), shape, self.lo, self.hi)


def _shape(resolution, d):
    if np.ndim(resolution) == 0:
        return (int(resolution),) * d
    if len(resolution) != d:
        raise ValueError("resolution must give one size per axis")
    return tuple(int(n) for n in resolution)


def fd_jacobian(fn, points, step=1e-5):
    points = np.atleast_2d(points)
    d = points.shape[1]
    J = np.empty((len(points), d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        J[:, :, j] = (fn(points + e) - fn(points - e)) / (2 * step)
    return J


def fd_divergence(fn, points, step=1e-5):
    return np.trace(fd_jacobian(fn, points, step), axis1=1, axis2=2)


def fd_curl(fn, points, step=1e-5):
    J = fd_jacobian(fn, points, step)
    if J.shape[1] == 2:
        return J[:, 1, 0] - J[:, 0, 1]
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=-1)


def grid_vorticity(grid: GridField):
    """Vorticity of gridded velocity by second-order differences (scalar in 2D)."""
    d = grid.dim
    J = np.empty(grid.shape + (d, d))
    for i in range(d):
        parts = np.gradient(grid.data[..., i], *grid.spacing, edge_order=2)
        for j in range(d):
            J[..., i, j] = parts[j]
    if d == 2:
        return J[..., 1, 0] - J[..., 0, 1]
    return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]], axis=-1)


# ---- analytic vortices ------------------------------------------------------------


def vortices_velocity(p):
    """Curl of A = (P, P + S, P), P = (1-x^2)(1-y^2)(1-z^2), S = sin(pi x) sin(pi y) sin(pi z)."""
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    ax, ay, az = 1 - x * x, 1 - y * y, 1 - z * z
    sx, sy, sz = np.sin(PI * x), np.sin(PI * y), np.sin(PI * z)
    cx, cz = np.cos(PI * x), np.cos(PI * z)
    # u = (dAz/dy - dAy/dz, dAx/dz - dAz/dx, dAy/dx - dAx/dy)
    ux = -2 * y * ax * az + 2 * z * ax * ay - PI * sx * sy * cz
    uy = -2 * z * ax * ay + 2 * x * ay * az
    uz = -2 * x * ay * az + PI * cx * sy * sz + 2 * y * ax * az
    return np.stack([ux, uy, uz], axis=-1)


def analytic_vortices() -> AnalyticField:
    return AnalyticField("analytic-vortices", vortices_velocity, (-1.0,) * 3, (1.0,) * 3)


def gen_analytic_vortices(resolution) -> GridField:
    return analytic_vortices().sample(resolution)


# ---- projection pair -------------------------------------------------------------


def taylor_green_2d() -> AnalyticField:
    def vel(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([np.sin(PI * x) * np.cos(PI * y), -np.cos(PI * x) * np.sin(PI * y)], axis=-1)

    def vort(p):
        return 2 * PI * np.sin(PI * p[:, 0]) * np.sin(PI * p[:, 1])

    return AnalyticField("taylor-green", vel, (-1.0, -1.0), (1.0, 1.0), vort)


@dataclass
class CosinePotential:
    """Smooth random potential ``amp * sum_j c_j cos(pi k_j . x + theta_j) / (pi |k_j|)``.

    Its gradient has magnitude of order ``amp``.
    """

    waves: np.ndarray
    coef: np.ndarray
    phase: np.ndarray
    amp: float

    @classmethod
    def random(cls, d, amp, seed, modes=6, kmax=2):
        rng = make_rng(seed, 3)
        waves = rng.integers(-kmax, kmax + 1, size=(modes, d)).astype(float)
        zero = ~waves.any(axis=1)
        waves[zero, 0] = 1.0
        coef = rng.normal(size=modes) / np.sqrt(modes)
        phase = rng.uniform(0, 2 * PI, modes)
        return cls(waves, coef, phase, float(amp))

    def _arg(self, p):
        return PI * p @ self.waves.T + self.phase

    def __call__(self, p):
        kn = np.linalg.norm(self.waves, axis=1)
        return self.amp * np.cos(self._arg(p)) @ (self.coef / (PI * kn))

    def gradient(self, p):
        kn = np.linalg.norm(self.waves, axis=1)
        return -self.amp * (np.sin(self._arg(p)) * (self.coef / kn)) @ self.waves

    def laplacian(self, p):
        kn = np.linalg.norm(self.waves, axis=1)
        return -self.amp * np.cos(self._arg(p)) @ (self.coef * PI * kn)


def projection_fields(d=2, noise_amp=0.5, seed=0):
    """(clean, contaminated, potential): clean is divergence-free, the difference is a gradient."""
    if d == 2:
        clean = taylor_green_2d()
    elif d == 3:
        clean = analytic_vortices()
    else:
        raise ValueError("dimension must be 2 or 3")
    pot = CosinePotential.random(d, noise_amp, seed)
    dirty = AnalyticField(clean.case + "+gradient", lambda p: clean.velocity(p) + pot.gradient(p),
                          clean.lo, clean.hi, clean.vorticity_fn, divergence_free=noise_amp == 0)
    return clean, dirty, pot


def gen_projection_pair(resolution, noise_amp, seed=0, d=2):
    clean, dirty, _ = projection_fields(d, noise_amp, seed)
    return clean.sample(resolution), dirty.sample(resolution)


# ---- laminar stitch -------------------------------------------------------------


@dataclass
class StitchCase:
    obs: ObservationSet
    mask: GridField
    grid: GridField
    annulus: np.ndarray
    angle: float


def gen_laminar_stitch(angle=0.0, outer=0.5, inner=0.2, resolution=64, lo=(-1.0, -1.0), hi=(1.0, 1.0)) -> StitchCase:
    """Unit flow along +x outside the box ``|x|_inf <= outer`` and the same flow rotated
    by ``angle`` degrees inside ``|x|_inf <= inner``; the ring between is hidden.

    ``outer``/``inner`` are half-widths of centred boxes or explicit ``(lo, hi)`` pairs.
    """
    o_lo, o_hi = _box(outer)
    i_lo, i_hi = _box(inner)
    if np.any(o_lo >= o_hi) or np.any(i_lo >= i_hi):
        raise ValueError("degenerate box")
    if not (np.all(i_lo > o_lo) and np.all(i_hi < o_hi)):
        raise ValueError("inner box must lie strictly inside the outer box")
    shape = _shape(resolution, 2)
    pts = grid_points(lo, hi, shape)
    inside_outer = np.all((pts >= o_lo) & (pts <= o_hi), axis=1)
    inside_inner = np.all((pts >= i_lo) & (pts <= i_hi), axis=1)
    t = np.deg2rad(angle)
    vel = np.tile([1.0, 0.0], (len(pts), 1))
    vel[inside_inner] = [np.cos(t), np.sin(t)]
    annulus = inside_outer & ~inside_inner
    supervised = ~annulus
    mask = GridField.from_values(supervised.astype(float), shape, lo, hi)
    grid = GridField.from_values(np.where(annulus[:, None], 0.0, vel), shape, lo, hi)
    obs = ObservationSet(pts[supervised], vel[supervised])
    return StitchCase(obs, mask, grid, annulus, float(angle))


def _box(spec):
    if np.ndim(spec) == 0:
        return np.full(2, -float(spec)), np.full(2, float(spec))
    a, b = spec
    return np.asarray(a, dtype=float), np.asarray(b, dtype=float)


# ---- advected scalar ------------------------------------------------------------


@dataclass
class GaussianBlob:
    center: np.ndarray
    width: float = 0.2
    amplitude: float = 1.0

    def __call__(self, p):
        z = (p - self.center) / self.width
        return self.amplitude * np.exp(-0.5 * np.einsum("ij,ij->i", z, z))

    def third_directional(self, p, direction):
        """Third derivative along the unit vector ``direction``."""
        s = (p - self.center) @ direction / self.width
        return self(p) * (3 * s - s**3) / self.width**3


def rk4_backtrace(velocity, points, t, substeps=8):
    """Foot points of characteristics ending at ``points`` after time ``t`` (fourth order)."""
    x = np.array(points, dtype=float)
    if t == 0:
        return x
    h = -t / substeps
    for _ in range(substeps):
        k1 = velocity(x)
        k2 = velocity(x + 0.5 * h * k1)
        k3 = velocity(x + 0.5 * h * k2)
        k4 = velocity(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def gen_advected_scalar(velocity, sigma0=None, frames=21, dt=0.05, resolution=64,
                        lo=(-1.0, -1.0), hi=(1.0, 1.0), substeps=8) -> ScalarSequence:
    """Frames of a scalar advected by a constant vector or a steady :class:`AnalyticField`.

    Constant velocity samples the exact ``sigma0(x - t u)``; analytic fields
    backtrace characteristics with RK4 (global error O((t / substeps)^4)).
    """
    if frames < 3:
        raise ValueError("need at least three frames")
    lo = tuple(float(v) for v in lo)
    hi = tuple(float(v) for v in hi)
    d = len(lo)
    if sigma0 is None:
        sigma0 = GaussianBlob(np.zeros(d))
    shape = _shape(resolution, d)
    pts = grid_points(lo, hi, shape)
    grids = np.empty((frames,) + shape)
    for k in range(frames):
        t = k * dt
        if isinstance(velocity, AnalyticField):
            foot = rk4_backtrace(velocity.velocity, pts, t, substeps)
        else:
            foot = pts - t * np.asarray(velocity, dtype=float)
        grids[k] = sigma0(foot).reshape(shape)
    return ScalarSequence(grids, dt, lo, hi)


def advection_truncation_estimate(seq: ScalarSequence, u, blob: GaussianBlob, frame):
    """Leading central-difference truncation of ``sigma_t + u . grad sigma`` at the
    interior nodes of ``frame`` for a blob translated by the constant ``u``."""
    u = np.asarray(u, dtype=float)
    pts = seq.node_points()[seq.interior_mask()]
    foot = pts - frame * seq.dt * u
    speed = np.linalg.norm(u)
    est = np.zeros(len(pts))
    if speed > 0:
        # sigma_ttt = -(u . grad)^3 sigma0
        est += seq.dt**2 / 6 * speed**3 * np.abs(blob.third_directional(foot, u / speed))
    for i, hx in enumerate(seq.spacing):
        e = np.zeros(len(u))
        e[i] = 1.0
        est += abs(u[i]) * hx**2 / 6 * np.abs(blob.third_directional(foot, e))
    return est
