"""Aubry-set components of ``x' = b(x)``: fixed points, cycles, boundary flow.

Under the standing hyperbolicity assumptions the components are exactly the
hyperbolic fixed points and limit cycles of the drift inside the domain, and
the hyperbolic fixed points and cycles of the tangential drift on the part of
the boundary where the drift points outward.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .expr import FieldExpr
from .problem import ProblemInstance

log = logging.getLogger(__name__)

HYPERBOLIC_TOL = 1e-8
ROOT_TOL = 1e-12
MERGE_RADIUS = 1e-6
MULTIPLIER_TOL = 1e-6
N_BOUNDARY = 2048


class FlowError(RuntimeError):
    pass


class NoCycleFound(FlowError):
    pass


class Kind(str, Enum):
    INTERIOR_POINT = "InteriorFixedPoint"
    BOUNDARY_POINT = "BoundaryFixedPoint"
    INTERIOR_CYCLE = "InteriorCycle"
    BOUNDARY_CYCLE = "BoundaryCycle"


@dataclass
class AubryComponent:
    kind: Kind
    location: np.ndarray | None = None  # fixed points
    orbit: np.ndarray | None = None  # (n+1, 2) samples, orbit[0] == orbit[-1]
    times: np.ndarray | None = None
    period: float | None = None
    B: np.ndarray | None = None  # interior point: drift Jacobian
    theta: np.ndarray | None = None  # eigenvalues of B (complex)
    theta_tilde: float | None = None  # boundary point: d b_tau / ds
    monodromy: np.ndarray | None = None
    multipliers: np.ndarray | None = None  # all Floquet multipliers (complex)
    Theta: np.ndarray | None = None  # moduli of the nontrivial multipliers
    b_nu_range: tuple[float, float] | None = None
    boundary_index: int | None = None  # which boundary curve
    arclength: float | None = None  # boundary point position
    certificates: dict = field(default_factory=dict)

    @property
    def is_cycle(self) -> bool:
        return self.kind in (Kind.INTERIOR_CYCLE, Kind.BOUNDARY_CYCLE)

    @property
    def is_boundary(self) -> bool:
        return self.kind in (Kind.BOUNDARY_POINT, Kind.BOUNDARY_CYCLE)

    @property
    def points(self) -> np.ndarray:
        """Sample points covering the component (for distances and tubes)."""
        if self.is_cycle:
            return self.orbit[:-1]
        return np.asarray(self.location, dtype=float).reshape(1, 2)

    @property
    def anchor(self) -> np.ndarray:
        return self.points[0]

    def label(self) -> str:
        if self.is_cycle:
            c = self.orbit[:-1].mean(axis=0)
            return f"{self.kind.value}@({c[0]:.4f},{c[1]:.4f})"
        return f"{self.kind.value}@({self.location[0]:.4f},{self.location[1]:.4f})"

    def to_dict(self, n_samples: int = 64) -> dict:
        out = {"kind": self.kind.value, "label": self.label()}
        if self.location is not None:
            out["location"] = [float(v) for v in self.location]
        if self.orbit is not None:
            idx = np.linspace(0, len(self.orbit) - 1, n_samples + 1).round().astype(int)
            out["orbit_samples"] = self.orbit[idx].tolist()
        if self.period is not None:
            out["period"] = float(self.period)
        if self.theta is not None:
            out["theta_real"] = [float(v) for v in np.real(self.theta)]
            out["theta_imag"] = [float(v) for v in np.imag(self.theta)]
        if self.theta_tilde is not None:
            out["theta_tilde"] = float(self.theta_tilde)
        if self.multipliers is not None:
            out["multipliers_abs"] = [float(v) for v in np.abs(self.multipliers)]
            out["Theta"] = [float(v) for v in self.Theta]
        if self.b_nu_range is not None:
            out["b_nu_range"] = [float(v) for v in self.b_nu_range]
        out["certificates"] = _jsonable(self.certificates)
        return out


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (bool, np.bool_)):
            out[k] = bool(v)
        elif isinstance(v, (int, np.integer)):
            out[k] = int(v)
        elif isinstance(v, (float, np.floating)):
            out[k] = float(v)
        else:
            out[k] = v
    return out


# --- drift helpers ---------------------------------------------------------

class Drift:
    """Vectorized drift and finite-difference Jacobian for one problem."""

    def __init__(self, problem: ProblemInstance, sign: float = 1.0):
        self.problem = problem
        self.sign = sign

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.sign * self.problem.drift(pts[..., 0], pts[..., 1])

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        """``J[..., i, j] = d b_i / d x_j`` with step ``1e-5 (1 + |x|)``."""
        pts = np.asarray(pts, dtype=float)
        h = 1e-5 * (1.0 + np.linalg.norm(pts, axis=-1))
        cols = []
        for j in range(2):
            e = np.zeros(pts.shape)
            e[..., j] = h
            cols.append((self(pts + e) - self(pts - e)) / (2 * h[..., None]))
        return np.stack(cols, axis=-1)


def _eig2(B: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of a real 2x2 matrix."""
    tr = B[0, 0] + B[1, 1]
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    disc = complex(tr * tr / 4 - det)
    root = np.sqrt(disc)
    return np.array([tr / 2 + root, tr / 2 - root])


# --- interior fixed points -------------------------------------------------

def find_interior_fixed_points(problem: ProblemInstance, n_seed: int = 16,
                               max_newton: int = 60) -> list[AubryComponent]:
    """Newton from an ``n_seed x n_seed`` lattice; roots merged and classified."""
    drift = Drift(problem)
    R = problem.domain.max_radius()
    g = (np.arange(n_seed) + 0.5) / n_seed * 2 * R - R
    X, Y = np.meshgrid(g, g, indexing="ij")
    inside = problem.domain.contains(X, Y, tol=-1e-9)
    seeds = np.stack([X[inside], Y[inside]], -1)
    roots = []
    for x in seeds:
        for _ in range(max_newton):
            bx = drift(x)
            if np.linalg.norm(bx) <= ROOT_TOL:
                break
            J = drift.jacobian(x)
            try:
                step = np.linalg.solve(J, bx)
            except np.linalg.LinAlgError:
                x = None
                break
            x = x - step
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 10 * R:
                x = None
                break
        else:
            x = None
        if x is None or np.linalg.norm(drift(x)) > ROOT_TOL:
            continue
        if not problem.domain.contains(x[0], x[1], tol=-1e-9):
            continue
        if any(np.linalg.norm(x - r) < MERGE_RADIUS for r in roots):
            continue
        roots.append(x)
    roots.sort(key=lambda p: (round(p[0], 9), round(p[1], 9)))
    comps = []
    for x in roots:
        B = drift.jacobian(x)
        theta = _eig2(B)
        hyperbolic = bool(np.all(np.abs(theta.real) >= HYPERBOLIC_TOL))
        if not hyperbolic:
            warnings.warn(f"non-hyperbolic fixed point at {x}: theta={theta}", RuntimeWarning)
        residual = float(np.linalg.norm(problem.drift(x[0], x[1])))
        comps.append(AubryComponent(
            kind=Kind.INTERIOR_POINT, location=x, B=B, theta=theta,
            certificates={"drift_norm": residual, "hyperbolic": hyperbolic,
                          "min_abs_re_theta": float(np.min(np.abs(theta.real)))},
        ))
    return comps


# --- RK4 machinery -----------------------------------------------------------

def _rk4_flow(drift: Drift, x0, T: float, n: int, variational: bool = True,
              extra: FieldExpr | None = None, keep: bool = False):
    """Integrate ``x' = b``, optionally ``Phi' = Db Phi`` and ``div b``/``f`` accumulators.

    Returns ``(x_T, Phi_T, int_div, int_f, path)``.
    """
    dt = T / n
    x = np.array(x0, dtype=float)
    Phi = np.eye(2)
    qdiv = 0.0
    qf = 0.0
    path = [x.copy()] if keep else None

    def rhs(x, Phi):
        b = drift(x)
        if not variational:
            return b, None, 0.0, (extra(*x) if extra is not None else 0.0)
        J = drift.jacobian(x)
        f = extra(*x) if extra is not None else 0.0
        return b, J @ Phi, float(np.trace(J)), f

    for _ in range(n):
        k1 = rhs(x, Phi)
        k2 = rhs(x + 0.5 * dt * k1[0], None if not variational else Phi + 0.5 * dt * k1[1])
        k3 = rhs(x + 0.5 * dt * k2[0], None if not variational else Phi + 0.5 * dt * k2[1])
        k4 = rhs(x + dt * k3[0], None if not variational else Phi + dt * k3[1])
        x = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        if variational:
            Phi = Phi + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            qdiv += dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        qf += dt / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if keep:
            path.append(x.copy())
    return x, Phi, qdiv, qf, (np.array(path) if keep else None)


def _rk4_many(drift: Drift, X: np.ndarray, dt: float, n: int, domain, stop_speed=1e-7):
    """Integrate a batch of points; frozen once they leave the domain or stall."""
    X = np.array(X, dtype=float)
    alive = np.ones(len(X), dtype=bool)
    exited = np.zeros(len(X), dtype=bool)
    for _ in range(n):
        if not alive.any():
            break
        x = X[alive]
        k1 = drift(x)
        k2 = drift(x + 0.5 * dt * k1)
        k3 = drift(x + 0.5 * dt * k2)
        k4 = drift(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        X[alive] = x
        out = ~domain.contains(x[:, 0], x[:, 1])
        slow = np.linalg.norm(drift(x), axis=-1) < stop_speed
        idx = np.flatnonzero(alive)
        exited[idx[out]] = True
        alive[idx[out | slow]] = False
    return X, exited


def _first_return(drift: Drift, p: np.ndarray, dt: float, t_max: float):
    """Time of the first return of the orbit of ``p`` to the section through ``p``."""
    normal = drift(p)
    x = p.copy()
    t = 0.0
    left = False
    prev = 0.0
    while t < t_max:
        k1 = drift(x)
        k2 = drift(x + 0.5 * dt * k1)
        k3 = drift(x + 0.5 * dt * k2)
        k4 = drift(x + dt * k3)
        xn = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        val = float((xn - p) @ normal)
        if np.linalg.norm(xn - p) > 10 * dt * np.linalg.norm(normal):
            left = True
        if left and prev < 0 <= val:
            frac = -prev / (val - prev)
            return t + frac * dt, x + frac * (xn - x)
        prev = val
        x = xn
        t += dt
    return None, None


def _shoot(drift: Drift, p: np.ndarray, T0: float, n_steps: int, max_newton: int = 30):
    """Newton on ``(x0, T)`` for ``phi_T(x0) = x0`` with phase ``(x0 - p).b(p) = 0``."""
    normal = drift(p)
    x0 = p.copy()
    T = T0
    for _ in range(max_newton):
        xT, Phi, _, _, _ = _rk4_flow(drift, x0, T, n_steps)
        F = np.concatenate([xT - x0, [(x0 - p) @ normal]])
        if np.linalg.norm(F[:2]) < 1e-12:
            break
        J = np.zeros((3, 3))
        J[:2, :2] = Phi - np.eye(2)
        J[:2, 2] = drift(xT)
        J[2, :2] = normal
        delta = np.linalg.solve(J, -F)
        x0 = x0 + delta[:2]
        T = T + delta[2]
        if T <= 0 or not np.all(np.isfinite(x0)):
            raise FlowError("shooting diverged")
    return x0, T


def _cycle_from_point(problem: ProblemInstance, drift: Drift, p: np.ndarray,
                      dt: float, t_max: float, sign: float,
                      steps_per_period: int = 1000) -> AubryComponent:
    T0, p = _first_return(drift, p, dt, t_max)
    if T0 is None:
        raise NoCycleFound("no return to the Poincare section")
    n = steps_per_period
    x0, T = _shoot(drift, p, T0, n)
    # Richardson step-halving check on the multipliers
    while True:
        x0, T = _shoot(drift, x0, T, n)
        _, Phi1, _, _, _ = _rk4_flow(drift, x0, T, n)
        _, Phi2, _, _, _ = _rk4_flow(drift, x0, T, 2 * n)
        m1 = np.sort(np.abs(np.linalg.eigvals(Phi1)))
        m2 = np.sort(np.abs(np.linalg.eigvals(Phi2)))
        if np.all(np.abs(m1 - m2) <= 1e-9 * np.maximum(1.0, m2)) or n >= 64000:
            break
        n *= 2
    # Repelling cycles are integrated in reversed time; the forward orbit is the
    # reversed path and the forward monodromy is the inverse of the reversed one.
    xP, Phi, qdiv, _, path = _rk4_flow(drift, x0, T, 2 * n, keep=True)
    if sign < 0:
        path = path[::-1].copy()
        Phi = np.linalg.inv(Phi)
        qdiv = -qdiv
        x0 = path[0]
        xP = path[-1]
    times = np.linspace(0.0, T, 2 * n + 1)
    mults = np.linalg.eigvals(Phi)
    i_triv = int(np.argmin(np.abs(mults - 1.0)))
    trivial_dev = float(abs(mults[i_triv] - 1.0))
    others = np.delete(mults, i_triv)
    Theta = np.abs(others)
    hyperbolic = bool(np.all(np.abs(Theta - 1.0) > MULTIPLIER_TOL))
    if trivial_dev > MULTIPLIER_TOL:
        warnings.warn(f"trivial Floquet multiplier off by {trivial_dev:.2e}", RuntimeWarning)
    if not hyperbolic:
        warnings.warn(f"non-hyperbolic cycle, multipliers {mults}", RuntimeWarning)
    det_err = float(abs(np.linalg.det(Phi) - np.exp(qdiv)) / np.exp(qdiv))
    return AubryComponent(
        kind=Kind.INTERIOR_CYCLE, orbit=path, times=times, period=float(T),
        monodromy=Phi, multipliers=mults, Theta=Theta,
        certificates={
            "closure_gap": float(np.linalg.norm(xP - x0)),
            "trivial_multiplier_dev": trivial_dev,
            "hyperbolic": hyperbolic,
            "abel_liouville_rel_err": det_err,
            "steps_per_period": int(2 * n),
            "integration_direction": int(sign),
        },
    )


def _step_size(problem: ProblemInstance) -> float:
    R = problem.domain.max_radius()
    g = np.linspace(-R, R, 9)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    L = float(np.max(np.abs(Drift(problem).jacobian(pts)))) + 1e-12
    return min(0.02, 0.1 / L)


def find_interior_cycle(problem: ProblemInstance, seed, t_transient: float = 60.0,
                        t_max: float = 200.0) -> AubryComponent:
    """Locate the limit cycle attracting (or, in reverse time, repelling) ``seed``."""
    seed = np.asarray(seed, dtype=float)
    if not problem.domain.contains(seed[0], seed[1]):
        raise ValueError("seed outside the domain")
    dt = _step_size(problem)
    n = int(np.ceil(t_transient / dt))
    for sign in (1.0, -1.0):
        drift = Drift(problem, sign)
        X, exited = _rk4_many(drift, seed[None, :], dt, n, problem.domain)
        p = X[0]
        if exited[0] or np.linalg.norm(drift(p)) < 1e-6:
            continue
        try:
            return _cycle_from_point(problem, drift, p, dt, t_max, sign)
        except NoCycleFound:
            continue
    raise NoCycleFound(f"no limit cycle reached from seed {tuple(seed)}")


def find_interior_cycles(problem: ProblemInstance, n_seed: int = 8,
                         extra_seeds=()) -> list[AubryComponent]:
    """Cycles reached forward or backward from a seed lattice (plus user seeds)."""
    R = problem.domain.max_radius()
    g = (np.arange(n_seed) + 0.5) / n_seed * 2 * R - R
    X, Y = np.meshgrid(g, g, indexing="ij")
    inside = problem.domain.contains(X, Y, tol=-1e-9)
    seeds = np.stack([X[inside], Y[inside]], -1)
    if len(extra_seeds):
        seeds = np.concatenate([np.asarray(extra_seeds, float).reshape(-1, 2), seeds])
    dt = _step_size(problem)
    n = int(np.ceil(60.0 / dt))
    cycles: list[AubryComponent] = []
    for sign in (1.0, -1.0):
        drift = Drift(problem, sign)
        ends, exited = _rk4_many(drift, seeds, dt, n, problem.domain)
        speed = np.linalg.norm(drift(ends), axis=-1)
        for p, ex, sp_ in zip(ends, exited, speed):
            if ex or sp_ < 1e-6:
                continue
            if any(_dist_to_orbit(p, c.orbit) < 1e-3 for c in cycles):
                continue
            try:
                cycles.append(_cycle_from_point(problem, drift, p, dt, 200.0, sign))
            except (NoCycleFound, FlowError, np.linalg.LinAlgError):
                continue
    cycles.sort(key=lambda c: tuple(np.round(c.orbit[:-1].mean(axis=0), 6)))
    return cycles


def _dist_to_orbit(p, orbit) -> float:
    """Distance to the orbit polyline, measured at its sample points minus half a segment."""
    seg = float(np.max(np.linalg.norm(np.diff(orbit, axis=0), axis=-1)))
    return max(0.0, float(np.min(np.linalg.norm(orbit - p, axis=-1))) - seg)


# --- boundary flow -----------------------------------------------------------

def boundary_flow_scan(problem: ProblemInstance, n_samples: int = N_BOUNDARY):
    """Components of the tangential flow where the drift exits, plus excluded roots."""
    comps, excluded = [], []
    for ib, curve in enumerate(problem.domain.boundary_curves()):
        L = curve.length

        def b_tau(s):
            g = curve.gamma(s)
            return np.sum(problem.drift(g[..., 0], g[..., 1]) * curve.tangent(s), -1)

        def b_nu(s):
            g = curve.gamma(s)
            return np.sum(problem.drift(g[..., 0], g[..., 1]) * curve.normal(s), -1)

        s = np.arange(n_samples) * (L / n_samples)
        bt = b_tau(s)
        bn = b_nu(s)
        tiny = np.abs(bt) < 1e-10
        flat = tiny & (np.roll(tiny, 1) | np.roll(tiny, -1))
        if np.any(flat & (bn > HYPERBOLIC_TOL)):
            raise FlowError("tangential drift vanishes on an interval where the drift exits "
                            "(degenerate boundary flow)")
        if flat.any():
            # stationary arcs with inward drift are not components; skip their noise roots
            excluded.append({"boundary_index": ib, "stationary_arc_samples": int(flat.sum()),
                             "b_nu_max": float(bn[flat].max())})
        roots = []
        for i in range(n_samples):
            if flat[i] or flat[(i + 1) % n_samples]:
                continue
            a, b = bt[i], bt[(i + 1) % n_samples]
            if a == 0.0:
                roots.append(s[i])
            elif a * b < 0:
                lo, hi = s[i], s[i] + L / n_samples
                roots.append(brentq(lambda t: float(b_tau(t)), lo, hi, xtol=ROOT_TOL, rtol=1e-15))
        for r in roots:
            r = float(np.mod(r, L))
            # five-point stencil: O(h^4) truncation, O(1e-13) rounding at this h
            h = 1e-3 * max(1.0, L / (2 * np.pi))
            theta_t = float((8 * (b_tau(r + h) - b_tau(r - h))
                             - (b_tau(r + 2 * h) - b_tau(r - 2 * h))) / (12 * h))
            bnr = float(b_nu(r))
            loc = curve.gamma(r)
            if bnr > HYPERBOLIC_TOL:
                hyperbolic = abs(theta_t) > HYPERBOLIC_TOL
                if not hyperbolic:
                    warnings.warn(f"non-hyperbolic boundary fixed point at {loc}", RuntimeWarning)
                comps.append(AubryComponent(
                    kind=Kind.BOUNDARY_POINT, location=loc, theta_tilde=theta_t,
                    b_nu_range=(bnr, bnr), boundary_index=ib, arclength=r,
                    certificates={"b_tau": float(b_tau(r)), "hyperbolic": hyperbolic},
                ))
            else:
                excluded.append({"location": [float(v) for v in loc], "b_nu": bnr,
                                 "boundary_index": ib})
        if not roots and not flat.any() and bn.min() > HYPERBOLIC_TOL:
            # periodic trapezoid on a smooth periodic integrand
            P = float(np.sum(1.0 / np.abs(bt)) * (L / n_samples))
            orbit, times = _boundary_orbit(curve, b_tau, P)
            comps.append(AubryComponent(
                kind=Kind.BOUNDARY_CYCLE, orbit=orbit, times=times, period=P,
                Theta=np.array([]), multipliers=np.array([]),
                b_nu_range=(float(bn.min()), float(bn.max())), boundary_index=ib,
                certificates={"closure_gap": float(np.linalg.norm(orbit[-1] - orbit[0])),
                              "direction": int(np.sign(bt[0]))},
            ))
    return comps, excluded


def _boundary_orbit(curve, b_tau, P: float, n: int = 2048):
    """Arclength ``s(t)`` of ``s' = b_tau(s)`` by RK4 over one period."""
    dt = P / n
    s = 0.0
    ss = [s]
    for _ in range(n):
        k1 = b_tau(s)
        k2 = b_tau(s + 0.5 * dt * k1)
        k3 = b_tau(s + 0.5 * dt * k2)
        k4 = b_tau(s + dt * k3)
        s = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ss.append(s)
    orbit = curve.gamma(np.array(ss))
    return orbit, np.linspace(0.0, P, n + 1)


def boundary_flow_components(problem: ProblemInstance) -> list[AubryComponent]:
    return boundary_flow_scan(problem)[0]


def cycle_average(problem: ProblemInstance, component: AubryComponent, f: FieldExpr) -> float:
    """Time average of ``f`` along a cycle, accumulated as an extra RK4 state."""
    if not component.is_cycle:
        raise ValueError("cycle_average needs a cycle component")
    P = component.period
    if component.kind is Kind.INTERIOR_CYCLE:
        n = component.certificates.get("steps_per_period", 2000)
        # integrate in the stable time direction; the average does not depend on it
        sign = component.certificates.get("integration_direction", 1)
        _, _, _, qf, _ = _rk4_flow(Drift(problem, sign), component.orbit[0], P, n,
                                   variational=False, extra=f)
        return float(qf / P)
    curve = problem.domain.boundary_curves()[component.boundary_index]

    def rhs(s):
        g = curve.gamma(s)
        bt = float(np.sum(problem.drift(g[0], g[1]) * curve.tangent(s)))
        return bt, f(g[0], g[1])

    n = len(component.times) - 1
    dt = P / n
    s, q = 0.0, 0.0
    for _ in range(n):
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * dt * k1[0])
        k3 = rhs(s + 0.5 * dt * k2[0])
        k4 = rhs(s + dt * k3[0])
        s += dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        q += dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return float(q / P)


def analyze_flow(problem: ProblemInstance, cycle_seeds=()) -> dict:
    """All components in a deterministic order, with excluded boundary roots."""
    points = find_interior_fixed_points(problem)
    cycles = find_interior_cycles(problem, extra_seeds=cycle_seeds)
    boundary, excluded = boundary_flow_scan(problem)
    return {"components": points + cycles + boundary, "excluded": excluded}
