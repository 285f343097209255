"""Matrix-valued kernels built from a scalar radial profile.

A kernel of radius ``h`` centred at ``c`` is evaluated in normalized
coordinates ``y = (x - c) / h``.  All spatial derivatives are taken with
respect to the physical ``x``, so every quantity carries its chain-rule power
of ``1/h``:

=================  ============  ========  ==============  =================
kind               velocity      Jacobian  vorticity       vorticity grad
=================  ============  ========  ==============  =================
DIVFREE            h^-2          h^-3      h^-3            h^-4
CURLFREE, NEGLAP   h^-2          h^-3      (from Jacobian)
CURL               h^-1          h^-2      (from Jacobian)
REGULAR            h^0           h^-1      (from Jacobian)
=================  ============  ========  ==============  =================

The DIVFREE/CURLFREE/NEGLAP/REGULAR kinds share the form
``u = h^-p [F(r) alpha + G(r) (y.alpha) y]``; the curl kernel is
``u = h^-1 phi'(r)/r (y x alpha)`` (rotated gradient times a scalar in 2D).
Closed forms for the Wendland C4 DIVFREE kernel are provided as a fast path and
must agree with the generic coefficients derived from ``rbf_core``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from .rbf_core import RadialExpr, ScalarRBF, operator_exprs

# Wendland C4 normalization: literal operator application carries phi''(0) = -56.
WEN4_SCALE = 56.0


class Kind(enum.Enum):
    DIVFREE = "divfree"
    CURLFREE = "curlfree"
    NEGLAP = "neglap"
    CURL = "curl"
    REGULAR = "regular"

    @classmethod
    def parse(cls, name: "str | Kind") -> "Kind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown kernel kind {name!r}") from None


_SCALE_POWER = {Kind.DIVFREE: 2, Kind.CURLFREE: 2, Kind.NEGLAP: 2, Kind.CURL: 1, Kind.REGULAR: 0}


@dataclass(frozen=True)
class KernelKind:
    kind: Kind
    base: ScalarRBF = ScalarRBF.WEN4

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        object.__setattr__(self, "base", ScalarRBF.parse(self.base))

    @property
    def scale_power(self) -> int:
        return _SCALE_POWER[self.kind]

    @property
    def divergence_free(self) -> bool:
        return self.kind in (Kind.DIVFREE, Kind.CURL)

    def weight_width(self, d: int) -> int:
        return 1 if (self.kind is Kind.CURL and d == 2) else d

    def __str__(self):
        return f"{self.kind.value}-{self.base.value}"


DFK_WEN4 = KernelKind(Kind.DIVFREE, ScalarRBF.WEN4)


class NotImplementedForKind(NotImplementedError):
    pass


@functools.lru_cache(maxsize=None)
def _exprs(kind: Kind, base: ScalarRBF, d: int) -> dict:
    """Radial expressions for one (kind, base, dimension)."""
    out = {}
    if kind is Kind.REGULAR:
        F = base.expr
        G = None
    elif kind is Kind.CURL:
        d1 = base.expr.deriv()
        a = d1.over_r()
        out["a"] = a
        out["ap"] = a.deriv()
        return out
    else:
        neglap, a, b = operator_exprs(base, d)
        if kind is Kind.NEGLAP:
            F, G = neglap, None
        else:
            if b is None:
                raise NotImplementedForKind(
                    f"{kind.value} kernels need a profile that is smooth at the origin; "
                    f"{base.name} is not")
            if kind is Kind.DIVFREE:
                F, G = neglap + a, b
            else:
                F, G = -a, -b
    out["F"] = F
    out["Fp"] = F.deriv()
    out["G"] = G
    if G is not None:
        out["Gp"] = G.deriv()
    if kind is not Kind.DIVFREE:
        # div u = h^-(p+1) q(r) (y.alpha),  q = F'/r + r G' + (d+1) G
        Fr = out["Fp"].over_r()
        if Fr is None:
            raise NotImplementedForKind(f"{base.name} {kind.value} kernel is not differentiable at its centre")
        q = Fr
        if G is not None:
            q = q + out["Gp"].times_r() + G.scale(d + 1)
        out["q"] = q
        out["qp"] = q.deriv()
    else:
        Fr = out["Fp"].over_r()
        H = Fr - G
        out["H"] = H
        out["Hp"] = H.deriv()
    return out


def _quot(expr: RadialExpr, r, inv_r):
    """``expr(r)/r``: exact when ``r`` divides ``expr``, else paired with a factor vanishing at 0."""
    q = expr.over_r()
    if q is not None:
        return q(r)
    return expr(r) * inv_r


def _wen4_divfree(name: str, r, inv_r, d: int):
    """Closed forms for the Wendland C4 divergence-free kernel (factor 56 included)."""
    t = np.maximum(1.0 - r, 0.0)
    t2 = t * t
    t3 = t2 * t
    s = WEN4_SCALE
    if name == "F":
        return s * t2 * t2 * ((d - 1) * (1.0 + 4.0 * r) - 5.0 * (d + 5) * r * r)
    if name == "G":
        return s * 30.0 * t2 * t2
    if name == "Fr":
        if d == 2:
            return s * 30.0 * t3 * (7.0 * r - 3.0)
        return s * 120.0 * t3 * (2.0 * r - 1.0)
    if name == "Gr":
        return -s * 120.0 * t3 * inv_r
    if name == "H":
        if d == 2:
            return s * 120.0 * t3 * (2.0 * r - 1.0)
        return s * 30.0 * t3 * (9.0 * r - 5.0)
    if name == "Hr":
        if d == 2:
            return s * 120.0 * t2 * (5.0 - 8.0 * r) * inv_r
        return s * 360.0 * t2 * (2.0 - 3.0 * r) * inv_r
    raise KeyError(name)


def radial_coefficients(kk: KernelKind, r, d: int, names, fast: bool = True, inv_r=None) -> dict:
    """Evaluate named radial coefficients at normalized radii ``r``.

    Names: ``F, G`` (velocity), ``Fr = F'/r``, ``Gr = G'/r``, ``H = F'/r - G``
    (DIVFREE vorticity), ``Hr = H'/r``, ``q, qr`` (divergence of the other
    matrix kinds), ``a, ar`` (curl kernel).  Quotients that are singular at
    ``r = 0`` are returned as 0 there; every such coefficient multiplies a
    factor that vanishes at the centre to at least the same order.
    """
    r = np.asarray(r, dtype=float)
    if inv_r is None:
        with np.errstate(divide="ignore"):
            inv_r = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
    use_fast = fast and kk.kind is Kind.DIVFREE and kk.base is ScalarRBF.WEN4
    ex = _exprs(kk.kind, kk.base, d)
    out = {}
    for name in names:
        if use_fast:
            out[name] = _wen4_divfree(name, r, inv_r, d)
            continue
        if name in ("F", "G", "H", "q", "a"):
            e = ex.get(name)
            out[name] = np.zeros_like(r) if e is None else e(r)
        elif name in ("Fr", "Gr", "Hr", "qr", "ar"):
            e = ex.get(name[0] + "p") if name != "ar" else ex["ap"]
            out[name] = np.zeros_like(r) if e is None else _quot(e, r, inv_r)
        else:
            raise KeyError(name)
    return out


def _cross(a, b):
    return np.cross(a, b)


def _cross2(y):
    # y x e_z restricted to the plane
    return np.stack([y[..., 1], -y[..., 0]], axis=-1)


def _skew_vec(S):
    """v_n = sum_ij eps_ijn S_ij  ->  (S12 - S21, S20 - S02, S01 - S10)."""
    return np.stack([S[..., 1, 2] - S[..., 2, 1], S[..., 2, 0] - S[..., 0, 2], S[..., 0, 1] - S[..., 1, 0]], axis=-1)


def _skew_mat(alpha):
    """A_ij = eps_ijn alpha_n."""
    z = np.zeros_like(alpha[..., 0])
    a1, a2, a3 = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    return np.stack([
        np.stack([z, a3, -a2], axis=-1),
        np.stack([-a3, z, a1], axis=-1),
        np.stack([a2, -a1, z], axis=-1),
    ], axis=-2)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _matvec(S, y):
    return np.einsum("...ij,...j->...i", S, y)


class PairEval:
    """Kernel quantities for a batch of (point, kernel) pairs.

    ``offset`` is ``x - c`` with shape (M, d), ``h`` has shape (M,).  Weight-like
    arguments may carry extra leading axes (frames) that broadcast against M.
    """

    def __init__(self, kk: KernelKind, offset, h, fast: bool = True):
        offset = np.asarray(offset, dtype=float)
        h = np.asarray(h, dtype=float)
        if offset.ndim != 2 or offset.shape[1] not in (2, 3):
            raise ValueError(f"offset must have shape (M, 2|3), got {offset.shape}")
        h = np.broadcast_to(h, offset.shape[:1])
        if np.any(h <= 0):
            raise ValueError("kernel radius must be positive")
        self.kk = kk
        self.d = offset.shape[1]
        self.h = h
        self.y = offset / h[:, None]
        self.r = np.sqrt(_dot(self.y, self.y))
        with np.errstate(divide="ignore"):
            self.inv_r = np.where(self.r > 0, 1.0 / np.where(self.r > 0, self.r, 1.0), 0.0)
        self.fast = fast
        self._c = {}
        p = kk.scale_power
        self.s0 = h ** -p
        self.s1 = h ** -(p + 1)

    def coef(self, name):
        if name not in self._c:
            self._c.update(radial_coefficients(self.kk, self.r, self.d, [name], self.fast, self.inv_r))
        return self._c[name]

    @property
    def kind(self):
        return self.kk.kind

    def _check_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        w = self.kk.weight_width(self.d)
        if w == 1 and (alpha.ndim == 0 or alpha.shape[-1] != 1):
            alpha = alpha[..., None]
        if alpha.shape[-1] != w:
            raise ValueError(f"weights must have trailing size {w}, got {alpha.shape}")
        return alpha

    # ---- forward quantities ------------------------------------------------

    def matrix(self):
        """Kernel matrix (M, d, d) for the matrix-form kinds."""
        if self.kind is Kind.CURL:
            raise NotImplementedForKind("the curl kernel is not a symmetric matrix kernel")
        F = self.coef("F")
        eye = np.eye(self.d)
        out = F[:, None, None] * eye
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            G = self.coef("G")
            out = out + G[:, None, None] * self.y[:, :, None] * self.y[:, None, :]
        return out * self.s0[:, None, None]

    def velocity(self, alpha):
        alpha = self._check_alpha(alpha)
        y = self.y
        if self.kind is Kind.CURL:
            a = self.coef("a") * self.s0
            if self.d == 2:
                return (a * alpha[..., 0])[..., None] * _cross2(y)
            return a[:, None] * _cross(y, alpha)
        u = self.coef("F")[:, None] * alpha
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            u = u + (self.coef("G") * _dot(y, alpha))[..., None] * y
        return u * self.s0[:, None]

    def jacobian(self, alpha):
        """J_ij = du_i/dx_j, shape (..., M, d, d)."""
        alpha = self._check_alpha(alpha)
        y = self.y
        d = self.d
        if self.kind is Kind.CURL:
            s = self.s1[:, None, None]
            ar, a = self.coef("ar"), self.coef("a")
            if d == 2:
                w = alpha[..., 0]
                rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
                J = (ar * w)[..., None, None] * _cross2(y)[:, :, None] * y[:, None, :] + (a * w)[..., None, None] * rot
            else:
                J = ar[:, None, None] * _cross(y, alpha)[..., :, None] * y[:, None, :] + a[:, None, None] * _skew_mat(alpha)
            J = J * s
            return _close_trace(J)
        Fr = self.coef("Fr")
        J = Fr[:, None, None] * alpha[..., :, None] * y[:, None, :]
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            G, Gr = self.coef("G"), self.coef("Gr")
            ya = _dot(y, alpha)
            yy = y[:, :, None] * y[:, None, :]
            J = (J + (Gr * ya)[..., None, None] * yy
                 + G[:, None, None] * y[:, :, None] * alpha[..., None, :]
                 + (G * ya)[..., None, None] * np.eye(d))
        J = J * self.s1[:, None, None]
        if self.kind is Kind.DIVFREE:
            J = _close_trace(J)
        return J

    def divergence(self, alpha):
        alpha = self._check_alpha(alpha)
        if self.kk.divergence_free:
            return np.zeros(np.broadcast_shapes(alpha.shape[:-1], self.r.shape))
        return self.coef("q") * _dot(self.y, alpha) * self.s1

    def vorticity(self, alpha):
        """Curl of the velocity: (..., M) in 2D, (..., M, 3) in 3D."""
        alpha = self._check_alpha(alpha)
        if self.kind is Kind.DIVFREE:
            H = self.coef("H") * self.s1
            y = self.y
            if self.d == 2:
                return H * (y[:, 0] * alpha[..., 1] - y[:, 1] * alpha[..., 0])
            return H[:, None] * _cross(y, alpha)
        return vorticity_from_jacobian(self.jacobian(alpha))

    def vorticity_jacobian(self, alpha):
        """d omega_i / d x_j for 3D divergence-free kernels, shape (..., M, 3, 3)."""
        if self.d != 3:
            raise ValueError("vorticity gradient is defined for 3D kernels only")
        if self.kind is not Kind.DIVFREE:
            raise NotImplementedForKind("vorticity gradient is provided for divergence-free kernels")
        alpha = self._check_alpha(alpha)
        y = self.y
        s = (self.h ** -4)[:, None, None]
        H, Hr = self.coef("H"), self.coef("Hr")
        return (H[:, None, None] * _skew_mat(alpha) + Hr[:, None, None] * _cross(y, alpha)[..., :, None] * y[:, None, :]) * s

    # ---- adjoints w.r.t. weights --------------------------------------------

    def adjoint_velocity(self, g):
        g = np.asarray(g, dtype=float)
        y = self.y
        if self.kind is Kind.CURL:
            a = self.coef("a") * self.s0
            if self.d == 2:
                return (a * (g[..., 0] * y[:, 1] - g[..., 1] * y[:, 0]))[..., None]
            return a[:, None] * _cross(g, y)
        out = self.coef("F")[:, None] * g
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            out = out + (self.coef("G") * _dot(y, g))[..., None] * y
        return out * self.s0[:, None]

    def adjoint_jacobian(self, S):
        S = np.asarray(S, dtype=float)
        y = self.y
        if self.kind is Kind.CURL:
            ar, a = self.coef("ar"), self.coef("a")
            Sy = _matvec(S, y)
            if self.d == 2:
                out = ar * _dot(Sy, _cross2(y)) + a * (S[..., 0, 1] - S[..., 1, 0])
                return (out * self.s1)[..., None]
            return (ar[:, None] * _cross(Sy, y) + a[:, None] * _skew_vec(S)) * self.s1[:, None]
        Fr = self.coef("Fr")
        out = Fr[:, None] * _matvec(S, y)
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            G, Gr = self.coef("G"), self.coef("Gr")
            ySy = _dot(y, _matvec(S, y))
            trS = np.trace(S, axis1=-2, axis2=-1)
            StY = np.einsum("...ji,...j->...i", S, y)
            out = out + (Gr * ySy)[..., None] * y + G[:, None] * StY + (G * trS)[..., None] * y
        return out * self.s1[:, None]

    def adjoint_divergence(self, s):
        s = np.asarray(s, dtype=float)
        if self.kk.divergence_free:
            w = self.kk.weight_width(self.d)
            return np.zeros(np.broadcast_shapes(s.shape, self.r.shape) + (w,))
        return (self.coef("q") * s * self.s1)[..., None] * self.y

    def adjoint_vorticity(self, g):
        g = np.asarray(g, dtype=float)
        if self.kind is Kind.DIVFREE:
            H = self.coef("H") * self.s1
            y = self.y
            if self.d == 2:
                return (H * g)[..., None] * np.stack([-y[:, 1], y[:, 0]], axis=-1)
            return H[:, None] * _cross(g, y)
        return self.adjoint_jacobian(jacobian_seed_from_vorticity(g, self.d))

    def adjoint_vorticity_jacobian(self, S):
        if self.d != 3:
            raise ValueError("vorticity gradient is defined for 3D kernels only")
        if self.kind is not Kind.DIVFREE:
            raise NotImplementedForKind("vorticity gradient is provided for divergence-free kernels")
        S = np.asarray(S, dtype=float)
        H, Hr = self.coef("H"), self.coef("Hr")
        s = (self.h ** -4)[:, None]
        return (H[:, None] * _skew_vec(S) + Hr[:, None] * _cross(_matvec(S, self.y), self.y)) * s

    # ---- adjoints w.r.t. geometry -------------------------------------------

    def adjoint_geometry_velocity(self, alpha, g, J=None, u=None):
        """(dL/dcenter (..., M, d), dL/dh (..., M)) for upstream gradient ``g`` on velocity."""
        g = np.asarray(g, dtype=float)
        if u is None:
            u = self.velocity(alpha)
        if J is None and self.kind is not Kind.CURL:
            JTg = self._jacobian_t(self._check_alpha(alpha), g)
        else:
            if J is None:
                J = self.jacobian(alpha)
            JTg = np.einsum("...ji,...j->...i", J, g)
        dc = -JTg
        dh = -(self.kk.scale_power / self.h) * _dot(g, u) - _dot(JTg, self.y)
        return dc, dh

    def _jacobian_t(self, alpha, g):
        """J^T g for the matrix-form kinds without forming J."""
        y = self.y
        out = (self.coef("Fr") * _dot(alpha, g))[..., None] * y
        if self.kind not in (Kind.NEGLAP, Kind.REGULAR):
            G, Gr = self.coef("G"), self.coef("Gr")
            ya, yg = _dot(y, alpha), _dot(y, g)
            out = out + (Gr * ya * yg)[..., None] * y + (G * yg)[..., None] * alpha + (G * ya)[..., None] * g
        return out * self.s1[:, None]

    def adjoint_geometry_divergence(self, alpha, s):
        """Geometry gradient through the divergence, for upstream scalar ``s``."""
        alpha = self._check_alpha(alpha)
        s = np.asarray(s, dtype=float)
        if self.kk.divergence_free:
            shp = np.broadcast_shapes(s.shape, self.r.shape)
            return np.zeros(shp + (self.d,)), np.zeros(shp)
        y = self.y
        q, qr = self.coef("q"), self.coef("qr")
        ya = _dot(y, alpha)
        # grad_x div = h^-(p+2) [q'/r (y.a) y + q a]
        s2 = self.s1 / self.h
        grad = ((qr * ya)[..., None] * y + q[:, None] * alpha) * s2[:, None]
        div = q * ya * self.s1
        dc = -s[..., None] * grad
        dh = s * (-(self.kk.scale_power + 1) / self.h * div - _dot(grad, y))
        return dc, dh


def _close_trace(J):
    """Set the last diagonal entry from the zero-trace identity so the trace is exactly 0."""
    d = J.shape[-1]
    J = J.copy()
    rest = J[..., 0, 0]
    for i in range(1, d - 1):
        rest = rest + J[..., i, i]
    J[..., d - 1, d - 1] = -rest
    return J


def vorticity_from_jacobian(J):
    if J.shape[-1] == 2:
        return J[..., 1, 0] - J[..., 0, 1]
    return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]], axis=-1)


def jacobian_seed_from_vorticity(g, d):
    """Adjoint of ``vorticity_from_jacobian``."""
    g = np.asarray(g, dtype=float)
    if d == 2:
        S = np.zeros(g.shape + (2, 2))
        S[..., 1, 0] = g
        S[..., 0, 1] = -g
        return S
    S = np.zeros(g.shape[:-1] + (3, 3))
    S[..., 2, 1] += g[..., 0]
    S[..., 1, 2] -= g[..., 0]
    S[..., 0, 2] += g[..., 1]
    S[..., 2, 0] -= g[..., 1]
    S[..., 1, 0] += g[..., 2]
    S[..., 0, 1] -= g[..., 2]
    return S


# ---- single-kernel operations ---------------------------------------------------


def _single(kk, offset, h, fast=True):
    offset = np.asarray(offset, dtype=float)
    if offset.ndim == 1:
        offset = offset[None]
    if np.any(np.asarray(h) <= 0):
        raise ValueError("kernel radius must be positive")
    return PairEval(kk, offset, np.asarray(h, dtype=float).reshape(-1), fast=fast)


def _unbatch(x, batched):
    return x if batched else x[0]


def _as_kind(kind) -> KernelKind:
    if isinstance(kind, KernelKind):
        return kind
    return KernelKind(Kind.parse(kind))


def eval_matrix(kind, offset, h, d=None, fast=True):
    """Kernel matrix ``psi(x - c)`` for DIVFREE/CURLFREE (also NEGLAP/REGULAR) kinds."""
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    ev = _single(kk, offset, h, fast)
    if d is not None and ev.d != d:
        raise ValueError(f"offset has dimension {ev.d}, expected {d}")
    return _unbatch(ev.matrix(), batched)


def eval_neglap(base, offset, h, d=None):
    """``-Laplacian phi`` of the scaled kernel, the diagonal of the regular matrix kernel."""
    kk = KernelKind(Kind.NEGLAP, ScalarRBF.parse(base))
    batched = np.ndim(offset) == 2
    ev = _single(kk, offset, h)
    if d is not None and ev.d != d:
        raise ValueError(f"offset has dimension {ev.d}, expected {d}")
    val = ev.coef("F") * ev.s0
    return _unbatch(val, batched)


def velocity_contribution(kind, offset, h, alpha, fast=True):
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    return _unbatch(_single(kk, offset, h, fast).velocity(alpha), batched)


def jacobian_contribution(kind, offset, h, alpha, fast=True):
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    return _unbatch(_single(kk, offset, h, fast).jacobian(alpha), batched)


def vorticity_contribution(kind, offset, h, alpha, fast=True):
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    return _unbatch(_single(kk, offset, h, fast).vorticity(alpha), batched)


def vorticity_jacobian_contribution(kind, offset, h, alpha, fast=True):
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    return _unbatch(_single(kk, offset, h, fast).vorticity_jacobian(alpha), batched)


@dataclass
class AdjointBuffers:
    """Upstream gradients of a scalar loss w.r.t. one kernel's outputs."""

    dL_du: np.ndarray | None = None
    dL_djacobian: np.ndarray | None = None
    dL_dvorticity: np.ndarray | float | None = None
    dL_dvortjac: np.ndarray | None = None


_ADJ_FIELD = {
    "velocity": "dL_du",
    "jacobian": "dL_djacobian",
    "vorticity": "dL_dvorticity",
    "vortjac": "dL_dvortjac",
}


def adjoint_weights(kind, offset, h, adj: AdjointBuffers, which: str = "velocity", fast=True):
    """dL/dalpha through the selected kernel output."""
    kk = _as_kind(kind)
    if which not in _ADJ_FIELD:
        raise ValueError(f"unknown adjoint path {which!r}")
    buf = getattr(adj, _ADJ_FIELD[which])
    if buf is None:
        raise ValueError(f"adjoint buffer {_ADJ_FIELD[which]} is not populated")
    batched = np.ndim(offset) == 2
    ev = _single(kk, offset, h, fast)
    buf = np.asarray(buf, dtype=float)
    if not batched:
        buf = buf[None]
    d = ev.d
    expected = {"velocity": (d,), "jacobian": (d, d), "vorticity": () if d == 2 else (3,), "vortjac": (3, 3)}[which]
    if buf.shape[1:] != expected:
        raise ValueError(f"{_ADJ_FIELD[which]} must have shape {expected}, got {buf.shape[1:]}")
    fn = {
        "velocity": ev.adjoint_velocity,
        "jacobian": ev.adjoint_jacobian,
        "vorticity": ev.adjoint_vorticity,
        "vortjac": ev.adjoint_vorticity_jacobian,
    }[which]
    return _unbatch(fn(buf), batched)


def adjoint_geometry(kind, offset, h, alpha, dL_du, fast=True):
    """(dL/dcenter, dL/dh) through the velocity of one kernel."""
    kk = _as_kind(kind)
    batched = np.ndim(offset) == 2
    ev = _single(kk, offset, h, fast)
    alpha = np.asarray(alpha, dtype=float)
    g = np.asarray(dL_du, dtype=float)
    if not batched:
        alpha = alpha[None] if alpha.ndim >= 1 else np.reshape(alpha, (1, 1))
        g = g[None]
    dc, dh = ev.adjoint_geometry_velocity(alpha, g)
    return _unbatch(dc, batched), _unbatch(dh, batched)
