"""Scalar radial basis functions on the normalized radius ``r = |x - c| / h``.

Every profile is stored in factored form

    phi(r) = (1 - r)^m * P(r) * exp(-c r^2)

with integer ``m``, a polynomial ``P`` in ascending coefficients and an
optional Gaussian exponent ``c``.  Derivatives, quotients by ``r`` and the
``r -> 0`` limits are then exact polynomial manipulations, and values near the
edge of the support keep their ``(1 - r)^m`` factor instead of suffering the
cancellation of an expanded polynomial.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly


def _trim(coef: np.ndarray) -> np.ndarray:
    coef = np.trim_zeros(np.asarray(coef, dtype=float), "b")
    return coef if coef.size else np.zeros(1)


@dataclass(frozen=True, eq=False)
class RadialExpr:
    """``(1 - r)^m * P(r) * exp(-gauss * r^2)``, cut to zero for r >= 1 when compact."""

    m: int
    poly: np.ndarray
    gauss: float = 0.0
    compact: bool = True

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        val = npoly.polyval(r, self.poly)
        if self.m:
            val = val * (1.0 - r) ** self.m
        if self.gauss:
            val = val * np.exp(-self.gauss * r * r)
        if self.compact:
            val = np.where(r < 1.0, val, 0.0)
        return val

    def _like(self, m, poly) -> "RadialExpr":
        return RadialExpr(m, _trim(poly), self.gauss, self.compact)

    def _aligned(self, other: "RadialExpr"):
        if other.gauss != self.gauss or other.compact != self.compact:
            raise ValueError("cannot combine radial expressions of different families")
        m = min(self.m, other.m)
        lift = lambda e: npoly.polymul(e.poly, npoly.polypow([1.0, -1.0], e.m - m))
        return m, lift(self), lift(other)

    def __add__(self, other: "RadialExpr") -> "RadialExpr":
        m, p, q = self._aligned(other)
        return self._like(m, npoly.polyadd(p, q))

    def __sub__(self, other: "RadialExpr") -> "RadialExpr":
        m, p, q = self._aligned(other)
        return self._like(m, npoly.polysub(p, q))

    def __neg__(self) -> "RadialExpr":
        return self._like(self.m, -self.poly)

    def scale(self, k: float) -> "RadialExpr":
        return self._like(self.m, k * self.poly)

    def times_r(self, power: int = 1) -> "RadialExpr":
        return self._like(self.m, np.concatenate([np.zeros(power), self.poly]))

    def deriv(self) -> "RadialExpr":
        # d/dr[(1-r)^m P e^{-c r^2}] = (1-r)^(m-1) [(1-r) P' - m P - 2 c r (1-r) P] e^{-c r^2}
        p = self.poly
        if self.m == 0:
            out = npoly.polyder(p) if p.size > 1 else np.zeros(1)
            if self.gauss:
                out = npoly.polysub(out, npoly.polymulx(2.0 * self.gauss * p))
            return self._like(0, out)
        one_minus = np.array([1.0, -1.0])
        dp = npoly.polyder(p) if p.size > 1 else np.zeros(1)
        out = npoly.polysub(npoly.polymul(one_minus, dp), self.m * p)
        if self.gauss:
            out = npoly.polysub(out, npoly.polymul(one_minus, npoly.polymulx(2.0 * self.gauss * p)))
        return self._like(self.m - 1, out)

    def at_zero(self) -> float:
        return float(self.poly[0])

    def over_r(self) -> "RadialExpr | None":
        """Exact quotient by ``r``, or ``None`` when ``r`` does not divide the expression."""
        if self.poly[0] != 0.0:
            return None
        return self._like(self.m, self.poly[1:])

    def is_zero(self) -> bool:
        return not np.any(self.poly)


def _wendland(m: int, poly) -> RadialExpr:
    return RadialExpr(m, _trim(poly))


class ScalarRBF(enum.Enum):
    """Radial profile families.

    ``GAUSS`` is the fixed-shape, untruncated ``exp(-9 r^2 / 2)``; it exists for
    kernel visualization and comparison only.
    """

    WEN4 = "wen4"
    WEN2 = "wen2"
    POLY6 = "poly6"
    GAUSS = "gauss"

    @property
    def expr(self) -> RadialExpr:
        return _PROFILES[self]

    @property
    def compact(self) -> bool:
        return self is not ScalarRBF.GAUSS

    @classmethod
    def parse(cls, name: "str | ScalarRBF") -> "ScalarRBF":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown radial family {name!r}") from None


_PROFILES = {
    ScalarRBF.WEN4: _wendland(6, [3.0, 18.0, 35.0]),
    ScalarRBF.WEN2: _wendland(4, [1.0, 4.0]),
    # (1 - r^2)^3 = (1 - r)^3 (1 + r)^3
    ScalarRBF.POLY6: _wendland(3, [1.0, 3.0, 3.0, 1.0]),
    ScalarRBF.GAUSS: RadialExpr(0, np.ones(1), gauss=4.5, compact=False),
}


def profile_derivative(family: ScalarRBF, order: int) -> RadialExpr:
    if order not in (0, 1, 2, 3, 4):
        raise ValueError(f"unsupported derivative order {order}")
    e = ScalarRBF.parse(family).expr
    for _ in range(order):
        e = e.deriv()
    return e


def eval_radial(family, r, order: int = 0):
    """phi(r), phi'(r) or phi''(r).  Accepts scalar or array ``r >= 0``."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    val = profile_derivative(ScalarRBF.parse(family), order)(r)
    return float(val) if val.ndim == 0 else val


def divide_r(expr: RadialExpr, r, power: int = 1):
    """``expr(r) / r**power`` with the exact limit at ``r = 0``.

    Exact polynomial division is used whenever ``r**power`` divides the
    expression.  Otherwise the quotient diverges at the origin and ``+-inf``
    is returned there.
    """
    e = expr
    for done in range(power):
        q = e.over_r()
        if q is None:
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = e(r) / r ** (power - done)
            lim = math.copysign(math.inf, e.at_zero())
            return np.where(r > 0, val, lim)
        e = q
    return e(r)


def operator_exprs(family, d: int):
    """(neglap, a, b) as radial expressions; ``b`` is ``None`` when not a polynomial.

    ``Hess phi = a I + b y y^T`` and ``-Laplacian phi = neglap``.
    """
    family = ScalarRBF.parse(family)
    d1 = family.expr.deriv()
    d2 = d1.deriv()
    a = d1.over_r()
    if a is None:
        raise ValueError(f"{family.name} has a cusp at the origin")
    neglap = -(d2 + a.scale(d - 1))
    num = d2 - a
    b = num.over_r()
    b = b.over_r() if b is not None else None
    return neglap, a, b


def radial_operator_coeffs(family, r, d: int):
    """Laplacian/Hessian coefficients of the radial function at ``r``.

    Returns ``neglap = -(phi'' + (d-1) phi'/r)``, ``a = phi'/r`` and
    ``b = (phi'' - phi'/r) / r^2``, all with their analytic values at r = 0.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    neglap, a, b = operator_exprs(family, d)
    if b is not None:
        bval = b(r)
    else:
        family = ScalarRBF.parse(family)
        d1 = family.expr.deriv()
        bval = divide_r(d1.deriv() - d1.over_r(), r, 2)
    out = (neglap(r), a(r), bval)
    if r.ndim == 0:
        return tuple(float(v) for v in out)
    return out
