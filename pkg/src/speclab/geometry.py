"""Star-shaped planar domains in a global polar chart.

Every domain is described by an outer radius function ``R(phi)`` and an
optional inner radius (annulus).  The chart used everywhere downstream is

    X(s, phi) = (R_in(phi) + s * (R(phi) - R_in(phi))) * (cos phi, sin phi),

with ``s`` in ``[0, 1]``.  For a disk ``R_in = 0`` and ``s = r / R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import FieldExpr, parse_field

TWO_PI = 2.0 * np.pi
_FD = 1e-4


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class _Radius:
    """Radius as a function of angle: a constant or an expression in ``phi``."""

    const: float | None = None
    expr: FieldExpr | None = None

    def __call__(self, phi):
        if self.expr is None:
            return np.full(np.shape(phi), self.const) if np.ndim(phi) else self.const
        return self.expr(phi=phi)

    def d1(self, phi):
        if self.expr is None:
            return np.zeros(np.shape(phi)) if np.ndim(phi) else 0.0
        return (self(phi + _FD) - self(phi - _FD)) / (2 * _FD)

    def d2(self, phi):
        if self.expr is None:
            return np.zeros(np.shape(phi)) if np.ndim(phi) else 0.0
        return (self(phi + _FD) - 2 * self(phi) + self(phi - _FD)) / _FD**2

    def describe(self):
        return self.const if self.expr is None else self.expr.source


def _radius(value) -> _Radius:
    if isinstance(value, (int, float)):
        return _Radius(const=float(value))
    return _Radius(expr=parse_field(str(value), variables=("phi",)))


@dataclass(frozen=True)
class BoundaryCurve:
    """One closed boundary component parametrized by arclength ``s``.

    ``outer`` curves run counterclockwise; the inner circle of an annulus is
    traversed clockwise so that the domain always lies to the left.
    ``normal`` is the external unit normal of the domain.
    """

    radius: _Radius
    outer: bool
    n_table: int = 8192
    _phi: np.ndarray = field(init=False, repr=False)
    _arc: np.ndarray = field(init=False, repr=False)
    length: float = field(init=False)

    def __post_init__(self):
        phi = np.linspace(0.0, TWO_PI, self.n_table + 1)
        speed = self._speed(phi)
        mid = self._speed(0.5 * (phi[1:] + phi[:-1]))
        seg = (speed[1:] + 4 * mid + speed[:-1]) * (phi[1] - phi[0]) / 6.0
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "_phi", phi)
        object.__setattr__(self, "_arc", arc)
        # exact circumference for circles keeps s -> phi free of table error
        L = TWO_PI * self.radius.const if self.radius.expr is None else float(arc[-1])
        object.__setattr__(self, "length", L)

    def _speed(self, phi):
        r, dr = self.radius(phi), self.radius.d1(phi)
        return np.sqrt(r * r + dr * dr)

    def phi_of_s(self, s):
        """Polar angle of the boundary point at arclength ``s``."""
        s = np.mod(s, self.length)
        if self.radius.expr is None:
            phi = s / self.radius.const
        else:
            phi = np.interp(s, self._arc, self._phi)
            # two Newton polishes on arc(phi) = s
            for _ in range(2):
                arc = np.interp(phi, self._phi, self._arc)
                phi = phi - (arc - s) / self._speed(phi)
        return phi if self.outer else np.mod(-phi, TWO_PI)

    def point_at_phi(self, phi):
        r = self.radius(phi)
        return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)

    def gamma(self, s):
        return self.point_at_phi(self.phi_of_s(s))

    def tangent(self, s):
        phi = self.phi_of_s(s)
        r, dr = self.radius(phi), self.radius.d1(phi)
        c, sn = np.cos(phi), np.sin(phi)
        t = np.stack([dr * c - r * sn, dr * sn + r * c], axis=-1)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return t if self.outer else -t

    def normal(self, s):
        t = self.tangent(s)
        # domain on the left of the traversal; external normal on the right
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)

    def speed_ds_dphi(self, phi):
        return self._speed(phi)


@dataclass(frozen=True)
class DomainGeometry:
    kind: str
    outer: _Radius
    inner: _Radius | None = None

    @property
    def is_annulus(self) -> bool:
        return self.inner is not None

    def r_in(self, phi):
        if self.inner is None:
            return np.zeros(np.shape(phi)) if np.ndim(phi) else 0.0
        return self.inner(phi)

    def r_out(self, phi):
        return self.outer(phi)

    def max_radius(self) -> float:
        phi = np.linspace(0, TWO_PI, 2048, endpoint=False)
        return float(np.max(self.outer(phi)))

    def contains(self, x, y, tol: float = 0.0):
        """Closed-domain membership test (vectorized)."""
        r = np.hypot(x, y)
        phi = np.mod(np.arctan2(y, x), TWO_PI)
        ok = r <= self.outer(phi) + tol
        if self.inner is not None:
            ok &= r >= self.inner(phi) - tol
        return ok

    def boundary_curves(self) -> list[BoundaryCurve]:
        curves = [BoundaryCurve(self.outer, outer=True)]
        if self.inner is not None:
            curves.append(BoundaryCurve(self.inner, outer=False))
        return curves

    # chart -------------------------------------------------------------

    def chart(self, s, phi):
        """Cartesian point of chart coordinates ``(s, phi)``."""
        ri, ro = self.r_in(phi), self.r_out(phi)
        r = ri + s * (ro - ri)
        return r * np.cos(phi), r * np.sin(phi)

    def to_chart(self, x, y):
        r = np.hypot(x, y)
        phi = np.mod(np.arctan2(y, x), TWO_PI)
        ri, ro = self.r_in(phi), self.r_out(phi)
        return (r - ri) / (ro - ri), phi

    def chart_metric(self, s, phi):
        """Jacobian data of the chart at ``(s, phi)``.

        Returns ``(Tinv, X2)`` where ``Tinv[..., k, i] = d xi_k / d x_i`` and
        ``X2[..., m, p, q] = d^2 X_m / d xi_p d xi_q`` with ``xi = (s, phi)``.
        """
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if self.inner is None:
            ri = d_ri = dd_ri = np.zeros_like(phi)
        else:
            ri, d_ri, dd_ri = self.inner(phi), self.inner.d1(phi), self.inner.d2(phi)
            ri, d_ri, dd_ri = (np.broadcast_to(v, phi.shape) for v in (ri, d_ri, dd_ri))
        ro = np.broadcast_to(self.outer(phi), phi.shape)
        d_ro = np.broadcast_to(self.outer.d1(phi), phi.shape)
        dd_ro = np.broadcast_to(self.outer.d2(phi), phi.shape)
        w = ro - ri
        r = ri + s * w
        r_p = d_ri + s * (d_ro - d_ri)
        r_pp = dd_ri + s * (dd_ro - dd_ri)
        c, sn = np.cos(phi), np.sin(phi)
        e_r = np.stack([c, sn], axis=-1)
        e_p = np.stack([-sn, c], axis=-1)
        X_s = w[..., None] * e_r
        X_p = r_p[..., None] * e_r + r[..., None] * e_p
        T = np.stack([X_s, X_p], axis=-1)  # T[..., m, p]
        Tinv = np.linalg.inv(T)
        X_ss = np.zeros_like(X_s)
        X_sp = (d_ro - d_ri)[..., None] * e_r + w[..., None] * e_p
        X_pp = (r_pp - r)[..., None] * e_r + 2 * r_p[..., None] * e_p
        X2 = np.stack([np.stack([X_ss, X_sp], -1), np.stack([X_sp, X_pp], -1)], -1)
        return Tinv, X2

    def describe(self) -> dict:
        out = {"kind": self.kind, "R": self.outer.describe()}
        if self.inner is not None:
            out["R_inner"] = self.inner.describe()
        return out


def disk(radius: float = 1.0) -> DomainGeometry:
    return DomainGeometry("disk", _Radius(const=float(radius)))


def annulus(r_inner: float, r_outer: float) -> DomainGeometry:
    if not 0 < r_inner < r_outer:
        raise GeometryError("annulus needs 0 < R_inner < R")
    return DomainGeometry("annulus", _Radius(const=float(r_outer)),
                          _Radius(const=float(r_inner)))


def star(radius_expr: str) -> DomainGeometry:
    rad = _radius(radius_expr)
    phi = np.linspace(0, TWO_PI, 1024, endpoint=False)
    if np.any(rad(phi) <= 0):
        raise GeometryError("star-shaped radius must be positive")
    return DomainGeometry("star", rad)


def domain_from_dict(spec: dict) -> DomainGeometry:
    kind = spec.get("kind")
    if kind == "disk":
        return disk(float(spec.get("R", 1.0)))
    if kind == "annulus":
        return annulus(float(spec["R_inner"]), float(spec["R"]))
    if kind == "star":
        return star(spec["R"]) if isinstance(spec["R"], str) else disk(float(spec["R"]))
    raise GeometryError(f"unknown domain kind {kind!r}")
