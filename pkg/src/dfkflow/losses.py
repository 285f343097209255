"""Objective terms and their analytic parameter gradients.

Every term is an unsquared Euclidean norm averaged over its samples (and over
frames for multi-frame fields).  Gradients are assembled from the per-pair
adjoints in :mod:`dfkflow.matrix_kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .kernel_field import KernelField, PairSet, scatter

NORM_EPS = 1e-12
CHUNK = 8192
TERMS = ("obs", "div", "bou", "reg", "con")


@dataclass
class ObservationSet:
    points: np.ndarray
    values: np.ndarray
    frame: int = 0
    volume: float | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.points.shape != self.values.shape:
            raise ValueError("points and values must have the same shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite")

    def __len__(self):
        return len(self.points)


@dataclass
class BoundarySet:
    points: np.ndarray
    velocities: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.velocities is None:
            self.velocities = np.zeros_like(self.points)
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.velocities.shape != self.points.shape:
            raise ValueError("one solid velocity per boundary point required")

    def __len__(self):
        return len(self.points)


@dataclass
class ScalarSequence:
    """Passive-scalar frames on a vertex-centred grid: ``grids[f][i, j(, k)]``."""

    grids: np.ndarray
    dt: float
    lo: tuple
    hi: tuple

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=float)
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        if self.grids.ndim - 1 != len(self.lo):
            raise ValueError("grid rank does not match the bounding box")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_frames(self):
        return self.grids.shape[0]

    @property
    def shape(self):
        return self.grids.shape[1:]

    @property
    def spacing(self):
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.lo, self.hi, self.shape))

    def node_points(self):
        axes = [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[tuple(slice(1, -1) for _ in self.shape)] = True
        return m.ravel()

    def time_derivative(self, k, allow_edges=False):
        F = self.n_frames
        if 1 <= k <= F - 2:
            return (self.grids[k + 1] - self.grids[k - 1]) / (2 * self.dt)
        if not allow_edges:
            raise ValueError(f"frame {k} has no central time difference in a {F}-frame sequence")
        if F < 3:
            raise ValueError("at least three frames are needed")
        g = self.grids
        if k == 0:
            return (-3 * g[0] + 4 * g[1] - g[2]) / (2 * self.dt)
        return (3 * g[F - 1] - 4 * g[F - 2] + g[F - 3]) / (2 * self.dt)

    def spatial_gradient(self, k):
        """Second-order central differences, one-sided second order on the border."""
        parts = np.gradient(self.grids[k], *self.spacing, edge_order=2)
        if self.grids.ndim == 2:
            parts = [parts]
        return np.stack([p.ravel() for p in parts], axis=-1)


@dataclass
class LossConfig:
    lambda_div: float = 0.0
    lambda_bou: float = 0.0
    lambda_reg: float = 0.0
    lambda_con: float = 0.0
    eval_points: np.ndarray | None = None

    def __post_init__(self):
        for name in ("lambda_div", "lambda_bou", "lambda_reg", "lambda_con"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def weight(self, term):
        return 1.0 if term == "obs" else getattr(self, f"lambda_{term}")


@dataclass
class FieldGrad:
    weights: np.ndarray
    centers: np.ndarray | None = None
    radii: np.ndarray | None = None

    @classmethod
    def zeros(cls, field: KernelField, geometry=True):
        g = cls(np.zeros_like(field.weights))
        if geometry:
            g.centers = np.zeros_like(field.centers)
            g.radii = np.zeros_like(field.radii)
        return g

    def add(self, other: "FieldGrad", scale=1.0):
        self.weights += scale * other.weights
        if self.centers is not None and other.centers is not None:
            self.centers += scale * other.centers
            self.radii += scale * other.radii
        return self

    def as_dict(self):
        out = {"weights": self.weights}
        if self.centers is not None:
            out["centers"] = self.centers
            out["radii"] = self.radii
        return out


@dataclass
class LossReport:
    terms: dict
    total: float
    grad: FieldGrad | None = None
    weighted: dict = dc_field(default_factory=dict)


# ---- helpers -------------------------------------------------------------------


def _mean_norm(res):
    """Mean Euclidean norm over the leading axes, and its gradient."""
    res = np.asarray(res, dtype=float)
    count = res[..., 0].size
    n = np.sqrt(np.einsum("...i,...i->...", res, res))
    safe = np.where(n > NORM_EPS, n, 1.0)
    g = np.where((n > NORM_EPS)[..., None], res / safe[..., None], 0.0) / count
    return float(n.sum() / count), g


def _mean_abs(res):
    res = np.asarray(res, dtype=float)
    return float(np.abs(res).sum() / res.size), np.sign(res) / res.size


def _backprop_velocity(field, ps: PairSet, frame, g, grad: FieldGrad):
    """Accumulate gradients for upstream ``g`` on velocity at ``ps.points``.

    ``frame`` None means ``g`` has shape (F, P, d) covering every frame.
    """
    if ps.linear and grad.centers is None:
        if frame is None:
            grad.weights += ps.apply_adjoint(np.broadcast_to(g, (field.n_frames,) + g.shape[-2:]))
        else:
            grad.weights[frame] += ps.apply_adjoint(np.asarray(g)[None])[0]
        return
    alpha = field.pair_weights(ps, frame)
    gp = g[..., ps.pt, :]
    wg = ps.ev.adjoint_velocity(gp)
    if frame is None:
        grad.weights += np.moveaxis(scatter(ps.k, np.moveaxis(wg, 0, 1), field.n_kernels), 1, 0)
    else:
        grad.weights[frame] += scatter(ps.k, wg, field.n_kernels)
    if grad.centers is not None:
        dc, dh = ps.ev.adjoint_geometry_velocity(alpha, gp)
        if frame is None:
            dc, dh = dc.sum(axis=0), dh.sum(axis=0)
        grad.centers += scatter(ps.k, dc, field.n_kernels)
        grad.radii += scatter(ps.k, dh, field.n_kernels)


def _pairs(field, points, ps):
    return ps if ps is not None else field.pair_set(points)


def _in_chunks(term, field, points, geometry, *targets):
    """Sample-weighted combination of ``term`` over point chunks (every term is a mean)."""
    n = len(points)
    total, grad = 0.0, FieldGrad.zeros(field, geometry)
    for i in range(0, n, CHUNK):
        sl = slice(i, i + CHUNK)
        parts = [t[..., sl, :] if np.ndim(t) >= 2 else t for t in targets]
        v, g = term(field, points[sl], *parts, geometry)
        w = (min(n, i + CHUNK) - i) / n
        total += w * v
        grad.add(g, w)
    return total, grad


# ---- terms -------------------------------------------------------------------


def _velocity_norm_term(field, points, target, frame, geometry, ps):
    if len(points) == 0:
        raise ValueError("empty sample set")
    if ps is None and len(points) > CHUNK:
        return _in_chunks(lambda f, p, t, g: _velocity_norm_term(f, p, t, frame, g, None),
                          field, points, geometry, target)
    ps = _pairs(field, points, ps)
    u = field.velocity(ps, frame)
    value, g = _mean_norm(u - target)
    grad = FieldGrad.zeros(field, geometry)
    _backprop_velocity(field, ps, frame, g, grad)
    return value, grad


def loss_obs_fit(field: KernelField, obs: ObservationSet, geometry=True, ps=None):
    """Mean ``|u - u_D|`` over the observation points."""
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    return _velocity_norm_term(field, obs.points, obs.values, obs.frame, geometry, ps)


def loss_bou(field: KernelField, boundary: BoundarySet, frame=None, geometry=True, ps=None):
    """Mean ``|u - u_s|`` over boundary samples (all frames when ``frame`` is None)."""
    if len(boundary) == 0:
        raise ValueError("boundary set is empty")
    target = boundary.velocities if frame is not None else boundary.velocities[None]
    return _velocity_norm_term(field, boundary.points, target, frame, geometry, ps)


def loss_reg(field: KernelField, points, geometry=True, ps=None):
    """Mean ``|u|`` over points and frames."""
    points = np.atleast_2d(points)
    return _velocity_norm_term(field, points, 0.0, None, geometry, ps)


def time_difference_matrix(n_frames, dt):
    """Linear map from per-frame values to ``du/dt``: central inside, one-sided at the ends."""
    if n_frames < 3:
        raise ValueError("temporal continuity needs at least three frames")
    D = np.zeros((n_frames, n_frames))
    for k in range(1, n_frames - 1):
        D[k, k + 1] = 1.0 / (2 * dt)
        D[k, k - 1] = -1.0 / (2 * dt)
    D[0, 1], D[0, 0] = 1.0 / dt, -1.0 / dt
    D[-1, -1], D[-1, -2] = 1.0 / dt, -1.0 / dt
    return D


def loss_con(field: KernelField, points, geometry=True, ps=None):
    """Mean ``|du/dt|`` over points and frames."""
    points = np.atleast_2d(points)
    D = time_difference_matrix(field.n_frames, field.frame_dt)
    if ps is None and len(points) > CHUNK:
        return _in_chunks(lambda f, p, g: loss_con(f, p, g), field, points, geometry)
    ps = _pairs(field, points, ps)
    u = field.velocity(ps, None)
    ut = np.einsum("fk,kpd->fpd", D, u)
    value, g = _mean_norm(ut)
    gu = np.einsum("fk,fpd->kpd", D, g)
    grad = FieldGrad.zeros(field, geometry)
    _backprop_velocity(field, ps, None, gu, grad)
    return value, grad


def loss_div(field: KernelField, points, geometry=True, ps=None):
    """Mean ``|div u|``; identically zero for divergence-free kinds."""
    grad = FieldGrad.zeros(field, geometry)
    if field.kind.divergence_free:
        return 0.0, grad
    points = np.atleast_2d(points)
    if ps is None and len(points) > CHUNK:
        return _in_chunks(lambda f, p, g: loss_div(f, p, g), field, points, geometry)
    ps = _pairs(field, points, ps)
    div = field.divergence(ps, None)
    value, s = _mean_abs(div)
    sp = s[:, ps.pt]
    wg = ps.ev.adjoint_divergence(sp)
    grad.weights += np.moveaxis(scatter(ps.k, np.moveaxis(wg, 0, 1), field.n_kernels), 1, 0)
    if geometry:
        dc, dh = ps.ev.adjoint_geometry_divergence(field.pair_weights(ps, None), sp)
        grad.centers += scatter(ps.k, dc.sum(axis=0), field.n_kernels)
        grad.radii += scatter(ps.k, dh.sum(axis=0), field.n_kernels)
    return value, grad


def advection_residual_masked(u, seq, k, mask, allow_edges=False):
    """``sigma_t + u . grad sigma`` at the masked grid nodes of frame ``k``."""
    st = seq.time_derivative(k, allow_edges).ravel()[mask]
    gs = seq.spatial_gradient(k)[mask]
    return st + np.einsum("pd,pd->p", u, gs), gs


def loss_obs_advection(field: KernelField, seq: ScalarSequence, frame: int, geometry=False, ps=None,
                       allow_edges=False, field_frame=None):
    """Mean ``|sigma_t + u . grad sigma|`` over interior nodes of one frame."""
    if field_frame is None:
        field_frame = frame
    mask = seq.interior_mask()
    nodes = seq.node_points()[mask]
    ps = _pairs(field, nodes, ps)
    u = field.velocity(ps, field_frame)
    res, gs = advection_residual_masked(u, seq, frame, mask, allow_edges)
    value, s = _mean_abs(res)
    grad = FieldGrad.zeros(field, geometry)
    _backprop_velocity(field, ps, field_frame, s[:, None] * gs, grad)
    return value, grad


# ---- combined objective ------------------------------------------------------------


class Objective:
    """Weighted sum of the configured terms for one reconstruction problem.

    ``obs`` is a list of :class:`ObservationSet` (velocity supervision, one per
    frame) or ``None``; ``scalars`` a :class:`ScalarSequence` for advection
    supervision.  ``eval_points`` (from the config) carries the samples for the
    divergence, regularization and continuity terms and defaults to the
    observation points.
    """

    def __init__(self, cfg: LossConfig, obs=None, boundary: BoundarySet | None = None,
                 scalars: ScalarSequence | None = None, eval_points=None):
        if obs is not None and not isinstance(obs, (list, tuple)):
            obs = [obs]
        self.obs = list(obs) if obs is not None else []
        self.scalars = scalars
        if not self.obs and scalars is None:
            raise ValueError("objective needs velocity observations or a scalar sequence")
        for o in self.obs:
            if len(o) == 0:
                raise ValueError("observation set is empty")
        self.cfg = cfg
        self.boundary = boundary
        if eval_points is None:
            eval_points = cfg.eval_points
        self._eval_default = eval_points is None
        if eval_points is None:
            if self.obs:
                eval_points = np.concatenate([o.points for o in self.obs[:1]])
            else:
                eval_points = scalars.node_points()[scalars.interior_mask()]
        self.eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
        self._cache = {}

    @property
    def num_samples(self):
        if self.obs:
            return max(len(o) for o in self.obs)
        return int(self.scalars.interior_mask().sum())

    def active_terms(self, field):
        terms = ["obs"]
        cfg = self.cfg
        if cfg.lambda_div > 0 and not field.kind.divergence_free:
            terms.append("div")
        if cfg.lambda_bou > 0 and self.boundary is not None and len(self.boundary):
            terms.append("bou")
        if cfg.lambda_reg > 0:
            terms.append("reg")
        if cfg.lambda_con > 0 and field.n_frames >= 3:
            terms.append("con")
        return terms

    def domain_diagonal(self):
        pts = [o.points for o in self.obs] + [self.eval_points]
        allp = np.concatenate(pts)
        return float(np.linalg.norm(allp.max(axis=0) - allp.min(axis=0)))

    def batches(self, rng, batch_size):
        """Index batches for one epoch: a permutation of the observations per frame."""
        n = self.num_samples
        perms = [rng.permutation(len(o)) for o in self.obs] if self.obs else [rng.permutation(n)]
        n_steps = max(1, -(-n // batch_size))
        for s in range(n_steps):
            batch = {"obs": [p[s * batch_size:(s + 1) * batch_size] for p in perms]}
            if self._eval_default and self.obs:
                batch["eval"] = batch["obs"][0]
            else:
                batch["eval"] = rng.choice(len(self.eval_points), min(batch_size, len(self.eval_points)), replace=False)
            if self.boundary is not None and len(self.boundary):
                batch["bou"] = rng.choice(len(self.boundary), min(batch_size, len(self.boundary)), replace=False)
            yield batch

    def _ps(self, field, name, points, cacheable):
        if len(points) > CHUNK:
            return None
        if not cacheable:
            return field.pair_set(points)
        key = (field.centers.tobytes(), field.radii.tobytes())
        hit = self._cache.get(name)
        if hit is None or hit[0] != key:
            ps = field.pair_set(points)
            ps.linear = True
            hit = (key, ps)
            self._cache[name] = hit
        return hit[1]

    def term(self, field, name, batch=None, geometry=True):
        """(value, FieldGrad) of one unweighted term."""
        cache = batch is None and not geometry
        ev_idx = None if batch is None else batch.get("eval")
        ev_pts = self.eval_points if ev_idx is None else self.eval_points[ev_idx]
        if name == "obs":
            if self.obs:
                total, grad = 0.0, FieldGrad.zeros(field, geometry)
                for i, o in enumerate(self.obs):
                    idx = None if batch is None else batch["obs"][i]
                    pts = o.points if idx is None else o.points[idx]
                    vals = o.values if idx is None else o.values[idx]
                    if len(pts) == 0:
                        continue
                    v, g = _velocity_norm_term(field, pts, vals, o.frame, geometry,
                                               self._ps(field, f"obs{i}", pts, cache))
                    total += v
                    grad.add(g)
                scale = 1.0 / len(self.obs)
                grad.weights *= scale
                if grad.centers is not None:
                    grad.centers *= scale
                    grad.radii *= scale
                return total * scale, grad
            return self._advection(field, geometry, cache)
        if name == "div":
            return loss_div(field, ev_pts, geometry, self._ps(field, "eval", ev_pts, cache))
        if name == "bou":
            idx = None if batch is None else batch.get("bou")
            b = self.boundary if idx is None else BoundarySet(self.boundary.points[idx], self.boundary.velocities[idx])
            return loss_bou(field, b, None, geometry, self._ps(field, "bou", b.points, cache))
        if name == "reg":
            return loss_reg(field, ev_pts, geometry, self._ps(field, "eval", ev_pts, cache))
        if name == "con":
            return loss_con(field, ev_pts, geometry, self._ps(field, "eval", ev_pts, cache))
        raise KeyError(name)

    def _advection(self, field, geometry, cache):
        seq = self.scalars
        F = seq.n_frames
        if F < 3:
            raise ValueError("advection supervision needs at least three frames")
        if field.n_frames not in (1, F):
            raise ValueError("field frames must match the scalar sequence")
        mask = seq.interior_mask()
        nodes = seq.node_points()[mask]
        ps = self._ps(field, "adv", nodes, cache)
        grad = FieldGrad.zeros(field, geometry)
        if "adv_data" not in self._cache:
            self._cache["adv_data"] = [advection_residual_masked(np.zeros_like(nodes), seq, k, mask, True)
                                       for k in range(F)]
        data = self._cache["adv_data"]
        u = field.velocity(ps, None)
        total = 0.0
        g_all = np.zeros_like(u)
        for k in range(F):
            fk = k if field.n_frames == F else 0
            st, gs = data[k]
            res = st + np.einsum("pd,pd->p", u[fk], gs)
            v, s = _mean_abs(res)
            total += v / F
            g_all[fk] += (s / F)[:, None] * gs
        _backprop_velocity(field, ps, None, g_all, grad)
        return total, grad

    def evaluate(self, field: KernelField, batch=None, geometry=True) -> LossReport:
        terms, weighted = {}, {}
        grad = FieldGrad.zeros(field, geometry)
        total = 0.0
        for name in self.active_terms(field):
            v, g = self.term(field, name, batch, geometry)
            w = self.cfg.weight(name)
            terms[name] = v
            weighted[name] = w * v
            total += w * v
            grad.add(g, w)
        for name in TERMS:
            terms.setdefault(name, 0.0)
        return LossReport(terms, total, grad, weighted)


def total_loss(field, cfg: LossConfig, obs=None, boundary=None, scalars=None, geometry=True) -> LossReport:
    return Objective(cfg, obs, boundary, scalars).evaluate(field, None, geometry)
