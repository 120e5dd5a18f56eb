"""Hamilton-Jacobi distance ``d_H(., A)`` by semi-Lagrangian value iteration.

The dynamic-programming update at a node ``x`` is

    d(x) = min_v [ tau L(-v, x) + d(P(x + tau v)) ],

with ``P`` the reflection back into the closed domain along the chart ray
(radial for disks and annuli).  Each trial moves a fixed distance ``Delta``
(the local cell size), so ``tau = Delta / |v|``.  For a fixed direction
``u`` the cost ``tau L(-v, x)`` is then minimized in closed form by the
speed ``|b|_A / |u|_A`` (``A = a^{-1}``), which gives the geometric action

    Delta / 2 * ( |b|_A |u|_A - b.A u ),

and leaves a one-dimensional search over the direction angle.  Moving along
``u = b / |b|`` costs nothing, so the free drift control ``v = b`` is always
available.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .flow import AubryComponent, Drift, Kind
from .geometry import TWO_PI
from .grid import PolarGrid
from .problem import ProblemInstance

log = logging.getLogger(__name__)

BIG = 1e6
N_TAB = 4096


class DistanceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ValueIterationConfig:
    n_dir: int = 32  # coarse direction lattice
    n_refine: int = 18  # golden-section steps around the best direction
    tol: float = 1e-7
    max_sweeps: int = 2000
    travel_cells: float = 1.0  # Delta in units of the local cell size

    def __post_init__(self):
        if self.n_dir < 16:
            raise ValueError("at least 16 control directions are required")
        if self.tol <= 0 or self.max_sweeps < 1:
            raise ValueError("invalid stopping rule")


# --- numba kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _tab(tab, phi):
    n = tab.shape[0]
    f = phi / TWO_PI * n
    i = int(np.floor(f))
    w = f - i
    i0 = i % n
    return (1 - w) * tab[i0] + w * tab[(i0 + 1) % n]


@numba.njit(cache=True)
def _interp(d, x, y, rin_tab, rout_tab, has_centre):
    """Bilinear interpolation in the chart after clamping ``s`` to ``[0, 1]``."""
    n_r, n_phi = d.shape
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    if phi < 0:
        phi += TWO_PI
    ri = _tab(rin_tab, phi)
    ro = _tab(rout_tab, phi)
    s = (r - ri) / (ro - ri)
    if s > 1.0:
        s = 1.0
    if s < 0.0:
        s = 0.0
    js = s * n_r - 0.5
    kf = phi / TWO_PI * n_phi
    k0 = int(np.floor(kf))
    wk = kf - k0
    k0 = k0 % n_phi
    k1 = (k0 + 1) % n_phi
    if js >= n_r - 1:
        return (1 - wk) * d[n_r - 1, k0] + wk * d[n_r - 1, k1]
    if js < 0.0:
        if has_centre:
            # ring -1 is ring 0 seen across the centre on the opposite ray
            half = n_phi // 2
            wj = js + 1.0
            lo = (1 - wk) * d[0, (k0 + half) % n_phi] + wk * d[0, (k1 + half) % n_phi]
            hi = (1 - wk) * d[0, k0] + wk * d[0, k1]
            return (1 - wj) * lo + wj * hi
        return (1 - wk) * d[0, k0] + wk * d[0, k1]
    j0 = int(np.floor(js))
    wj = js - j0
    lo = (1 - wk) * d[j0, k0] + wk * d[j0, k1]
    hi = (1 - wk) * d[j0 + 1, k0] + wk * d[j0 + 1, k1]
    return (1 - wj) * lo + wj * hi


@numba.njit(cache=True)
def _trial(d, x, y, bx, by, A11, A12, A22, bnorm, delta, theta, rin_tab, rout_tab, has_centre):
    ux = np.cos(theta)
    uy = np.sin(theta)
    un = np.sqrt(A11 * ux * ux + 2 * A12 * ux * uy + A22 * uy * uy)
    bu = A11 * bx * ux + A12 * (bx * uy + by * ux) + A22 * by * uy
    cost = 0.5 * delta * (bnorm * un - bu)
    if cost < 0.0:
        cost = 0.0
    return cost + _interp(d, x + delta * ux, y + delta * uy, rin_tab, rout_tab, has_centre)


@numba.njit(cache=True)
def _sweep(d, best_theta, X, Y, BX, BY, A11, A12, A22, DELTA, tube, jdir, kdir,
           n_dir, n_refine, rin_tab, rout_tab, has_centre):
    n_r, n_phi = d.shape
    gr = 0.5 * (np.sqrt(5.0) - 1.0)
    max_upd = 0.0
    for jj in range(n_r):
        j = jj if jdir > 0 else n_r - 1 - jj
        for kk in range(n_phi):
            k = kk if kdir > 0 else n_phi - 1 - kk
            if tube[j, k]:
                continue
            x = X[j, k]
            y = Y[j, k]
            bx = BX[j, k]
            by = BY[j, k]
            a11 = A11[j, k]
            a12 = A12[j, k]
            a22 = A22[j, k]
            bnorm = np.sqrt(a11 * bx * bx + 2 * a12 * bx * by + a22 * by * by)
            dl = DELTA[j, k]
            best = d[j, k]
            bt = best_theta[j, k]
            v = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, bt, rin_tab, rout_tab, has_centre)
            tstar = bt
            vstar = v
            if bx != 0.0 or by != 0.0:
                tb = np.arctan2(by, bx)
                v = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, tb, rin_tab, rout_tab, has_centre)
                if v < vstar:
                    vstar = v
                    tstar = tb
            for i in range(n_dir):
                th = TWO_PI * i / n_dir
                v = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, th, rin_tab, rout_tab, has_centre)
                if v < vstar:
                    vstar = v
                    tstar = th
            # golden-section refinement on [tstar - w, tstar + w]
            w = TWO_PI / n_dir
            lo = tstar - w
            hi = tstar + w
            c1 = hi - gr * (hi - lo)
            c2 = lo + gr * (hi - lo)
            f1 = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, c1, rin_tab, rout_tab, has_centre)
            f2 = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, c2, rin_tab, rout_tab, has_centre)
            for _ in range(n_refine):
                if f1 < f2:
                    hi = c2
                    c2 = c1
                    f2 = f1
                    c1 = hi - gr * (hi - lo)
                    f1 = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, c1, rin_tab, rout_tab, has_centre)
                else:
                    lo = c1
                    c1 = c2
                    f1 = f2
                    c2 = lo + gr * (hi - lo)
                    f2 = _trial(d, x, y, bx, by, a11, a12, a22, bnorm, dl, c2, rin_tab, rout_tab, has_centre)
            if f1 < vstar:
                vstar = f1
                tstar = c1
            if f2 < vstar:
                vstar = f2
                tstar = c2
            if vstar < best:
                upd = d[j, k] - vstar
                if upd > max_upd:
                    max_upd = upd
                d[j, k] = vstar
                best_theta[j, k] = tstar
    return max_upd


@numba.njit(cache=True)
def _interp_many(d, P, rin_tab, rout_tab, has_centre):
    out = np.empty(P.shape[0])
    for i in range(P.shape[0]):
        out[i] = _interp(d, P[i, 0], P[i, 1], rin_tab, rout_tab, has_centre)
    return out


# --- python layer -----------------------------------------------------------

def _tables(grid: PolarGrid):
    phi = np.arange(N_TAB) * (TWO_PI / N_TAB)
    dom = grid.domain
    rin = np.asarray(dom.r_in(phi), dtype=float) * np.ones(N_TAB)
    rout = np.asarray(dom.r_out(phi), dtype=float) * np.ones(N_TAB)
    return rin, rout, not dom.is_annulus


def interpolate(grid: PolarGrid, values: np.ndarray, pts) -> np.ndarray:
    """Evaluate a grid function at Cartesian points (projected into the closed domain)."""
    rin, rout, centre = _tables(grid)
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
    return _interp_many(np.ascontiguousarray(values, dtype=float), pts, rin, rout, centre)


def _local_cell(grid: PolarGrid) -> np.ndarray:
    """Largest physical spacing of the cell around each node."""
    dom = grid.domain
    PHI = np.broadcast_to(grid.phi, grid.shape)
    width = (dom.r_out(PHI) - dom.r_in(PHI)) / grid.n_r
    return np.maximum(width, grid.radius * grid.h_phi)


def target_tube(grid: PolarGrid, component: AubryComponent) -> np.ndarray:
    """Nodes within one radial cell of the component (at least the nearest node)."""
    pts = grid.points
    comp = component.points
    if component.is_cycle:
        # densify the orbit so the polyline distance is resolved
        seg = comp
        dist = _min_dist(pts, seg)
    else:
        dist = np.linalg.norm(pts - comp[0], axis=-1)
    tube = dist <= grid.h_radial
    tube[np.argmin(dist)] = True
    return tube.reshape(grid.shape)


def _min_dist(pts, samples, chunk=4096):
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        p = pts[i:i + chunk]
        out[i:i + chunk] = np.min(np.linalg.norm(p[:, None, :] - samples[None, :, :], axis=-1),
                                  axis=1)
    return out


@dataclass
class DistanceField:
    target: AubryComponent
    grid: PolarGrid
    values: np.ndarray
    sweeps: int
    max_update: float
    tube: np.ndarray
    history: list = field(default_factory=list)
    residual: np.ndarray | None = None

    def __call__(self, pts) -> np.ndarray:
        return interpolate(self.grid, self.values, pts)

    def at_component(self, comp: AubryComponent) -> float:
        return float(np.min(self(comp.points)))

    def metadata(self) -> dict:
        return {"target": self.target.label(), "sweeps": self.sweeps,
                "max_update": self.max_update, "tube_nodes": int(self.tube.sum()),
                "max_value": float(self.values.max()),
                "grid": [self.grid.n_r, self.grid.n_phi]}


def solve_distance(problem: ProblemInstance, target: AubryComponent, grid: PolarGrid,
                   config: ValueIterationConfig | None = None) -> DistanceField:
    """Gauss-Seidel value iteration with four alternating sweep orderings."""
    cfg = config or ValueIterationConfig()
    X = np.ascontiguousarray(grid.x)
    Y = np.ascontiguousarray(grid.y)
    b = problem.drift(X, Y)
    a = problem.a_matrix(X, Y)
    problem.check_ellipticity(X, Y)
    A = np.linalg.inv(a)
    DELTA = cfg.travel_cells * _local_cell(grid)
    tube = target_tube(grid, target)
    d = np.full(grid.shape, BIG)
    d[tube] = 0.0
    best_theta = np.arctan2(b[..., 1], b[..., 0])
    rin, rout, centre = _tables(grid)
    orders = [(1, 1), (1, -1), (-1, -1), (-1, 1)]
    history = []
    upd = np.inf
    for sweep in range(cfg.max_sweeps):
        jd, kd = orders[sweep % 4]
        prev = d.copy()
        upd = _sweep(d, best_theta, X, Y, np.ascontiguousarray(b[..., 0]),
                     np.ascontiguousarray(b[..., 1]), np.ascontiguousarray(A[..., 0, 0]),
                     np.ascontiguousarray(A[..., 0, 1]), np.ascontiguousarray(A[..., 1, 1]),
                     DELTA, tube, jd, kd, cfg.n_dir, cfg.n_refine, rin, rout, centre)
        if not np.all(d <= prev):
            raise DistanceError("value iteration lost monotonicity")
        history.append(float(upd))
        # a full cycle of orderings without significant change ends the iteration
        if sweep >= 3 and max(history[-4:]) < cfg.tol:
            break
    else:
        raise DistanceError(f"no convergence after {cfg.max_sweeps} sweeps (last update {upd:.3e})")
    if np.any(d >= BIG):
        raise DistanceError("some nodes were never reached")
    return DistanceField(target, grid, d, len(history), float(upd), tube, history)


# --- composition and diagnostics -------------------------------------------------

@dataclass
class ComposedW:
    values: np.ndarray
    maximizer: str
    pairwise: np.ndarray
    labels: list
    order: list

    def to_dict(self) -> dict:
        return {"maximizer": self.maximizer, "labels": self.labels,
                "pairwise_distance": self.pairwise.tolist(), "order": self.order}


def pairwise_distances(components, fields) -> np.ndarray:
    """``D[j, k] = d_H(A_j, A_k)`` read off the field with target ``A_k``."""
    n = len(components)
    D = np.zeros((n, n))
    for k, f in enumerate(fields):
        for j, c in enumerate(components):
            D[j, k] = 0.0 if j == k else f.at_component(c)
    return D


def compose_W(components, sigma_report, distance_fields, tol: float = 1e-3) -> ComposedW:
    """``W = d_H(., M)`` for the unique maximizer, with the pairwise matrix and order."""
    if not sigma_report.unique:
        raise DistanceError("maximizer of sigma is not unique; the limit of W is not determined")
    i = sigma_report.argmax
    W = distance_fields[i].values.copy()
    D = pairwise_distances(components, distance_fields)
    labels = [c.label() for c in components]
    Wc = [float(distance_fields[i].at_component(c)) if j != i else 0.0
          for j, c in enumerate(components)]
    order = []
    for j in range(len(components)):
        for k in range(len(components)):
            # A_k precedes A_j when W(A_j) = d_H(A_j, A_k) + W(A_k)
            if j != k and abs(Wc[j] - (D[j, k] + Wc[k])) <= tol:
                order.append([labels[k], labels[j]])
    return ComposedW(W, labels[i], D, labels, order)


def chart_gradients(grid: PolarGrid, W: np.ndarray):
    """One-sided chart differences ``(W_s^-, W_s^+, W_phi^-, W_phi^+)``."""
    hs, hp = grid.h_s, grid.h_phi
    Wc = np.asarray(W, dtype=float)
    n_r, n_phi = Wc.shape
    half = n_phi // 2
    inner = np.roll(Wc[0], -half) if not grid.domain.is_annulus else Wc[0]
    up = np.vstack([Wc[1:], Wc[-1:]])
    down = np.vstack([inner[None, :], Wc[:-1]])
    Ws_p = (up - Wc) / hs
    Ws_m = (Wc - down) / hs
    Ws_p[-1] = 0.0  # Neumann mirror
    if grid.domain.is_annulus:
        Ws_m[0] = 0.0
    Wp_p = (np.roll(Wc, -1, axis=1) - Wc) / hp
    Wp_m = (Wc - np.roll(Wc, 1, axis=1)) / hp
    return Ws_m, Ws_p, Wp_m, Wp_p


def _cartesian(grid, Ws, Wp):
    S = np.broadcast_to(grid.s[:, None], grid.shape)
    PHI = np.broadcast_to(grid.phi[None, :], grid.shape)
    Tinv, _ = grid.domain.chart_metric(S, PHI)
    return Tinv[..., 0, :] * Ws[..., None] + Tinv[..., 1, :] * Wp[..., None]


@dataclass
class ResidualReport:
    field: np.ndarray
    interior_max: float
    boundary_defect: float
    mask: np.ndarray

    def to_dict(self) -> dict:
        return {"interior_max": self.interior_max, "boundary_defect": self.boundary_defect,
                "nodes": int(self.mask.sum())}


def viscosity_residual(problem: ProblemInstance, grid: PolarGrid, W: np.ndarray,
                       exclude: np.ndarray | None = None, band_cells: int = 3) -> ResidualReport:
    """``H(grad_h W, x)`` with one-sided differences picked along the optimal velocity.

    The optimal velocity ``b - 2 a p`` (from the central gradient) points to where
    the trajectory goes; the difference on that side is used in each chart direction.
    ``exclude`` marks nodes (kink bands, target tube) left out of the maximum;
    rows within ``band_cells`` of the boundary are also excluded.
    """
    Ws_m, Ws_p, Wp_m, Wp_p = chart_gradients(grid, W)
    pc = _cartesian(grid, 0.5 * (Ws_m + Ws_p), 0.5 * (Wp_m + Wp_p))
    X, Y = grid.x, grid.y
    a = problem.a_matrix(X, Y)
    b = problem.drift(X, Y)
    v = b - 2 * np.einsum("...ij,...j->...i", a, pc)
    S = np.broadcast_to(grid.s[:, None], grid.shape)
    PHI = np.broadcast_to(grid.phi[None, :], grid.shape)
    Tinv, _ = grid.domain.chart_metric(S, PHI)
    vs = np.einsum("...i,...i->...", Tinv[..., 0, :], v)
    vp = np.einsum("...i,...i->...", Tinv[..., 1, :], v)
    Ws = np.where(vs >= 0, Ws_p, Ws_m)
    Wp = np.where(vp >= 0, Wp_p, Wp_m)
    p = _cartesian(grid, Ws, Wp)
    H = np.einsum("...i,...ij,...j->...", p, a, p) - np.einsum("...i,...i->...", b, p)
    mask = np.ones(grid.shape, dtype=bool)
    mask[max(0, grid.n_r - band_cells):] = False
    if grid.domain.is_annulus:
        mask[:band_cells] = False
    if exclude is not None:
        mask &= ~exclude
    interior = float(np.max(np.abs(H[mask]))) if mask.any() else 0.0
    # boundary complementarity on the outer ring: min(|H|, max(dW/dnu, 0))
    Wn = (W[-1] - W[-2]) / grid.h_s
    Wn = Wn / (grid.domain.r_out(grid.phi) - grid.domain.r_in(grid.phi))
    bdef = float(np.max(np.minimum(np.abs(H[-1]), np.maximum(Wn, 0.0))))
    return ResidualReport(H, interior, bdef, mask)


def kink_band(grid: PolarGrid, W: np.ndarray, cells: int = 3, jump: float = 0.5) -> np.ndarray:
    """Nodes within ``cells`` of a gradient jump (second difference large versus first)."""
    Ws_m, Ws_p, Wp_m, Wp_p = chart_gradients(grid, W)
    js = np.abs(Ws_p - Ws_m) * grid.h_s
    scale = np.maximum(np.abs(Ws_p) + np.abs(Ws_m), 1e-12) * grid.h_s
    flag = js > jump * scale
    flag &= np.abs(Ws_p - Ws_m) > 10 * grid.h_s * (1 + np.abs(W).max())
    out = flag.copy()
    for shift in range(1, cells + 1):
        out[shift:] |= flag[:-shift]
        out[:-shift] |= flag[shift:]
    return out


@dataclass
class LocalBoundsReport:
    delta: float
    samples: int
    violations: int
    worst: dict
    slack: float
    lip: float
    h: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"delta": self.delta, "samples": self.samples, "violations": self.violations,
                "worst": self.worst, "slack": self.slack, "lip": self.lip, "h": self.h, "ok": self.ok}


def verify_local_bounds(problem: ProblemInstance, component: AubryComponent, grid: PolarGrid,
                        W: np.ndarray, pair, radius: float = 0.1, n: int = 2000,
                        seed: int = 0) -> LocalBoundsReport:
    """Sample ``2h <= |z| <= radius`` and test ``W^- - 2h Lip <= W - W(A) <= W^+ + 2h Lip``.

    ``h`` is the largest cell size among nodes of the sampled ball and ``Lip``
    the largest chart-difference gradient of ``W`` there.
    """
    if component.kind is not Kind.INTERIOR_POINT:
        raise NotImplementedError("sampled bounds are implemented for interior fixed points")
    x0 = component.location
    dist = np.linalg.norm(grid.points - x0, axis=-1).reshape(grid.shape)
    ball = dist <= radius
    if not ball.any():
        raise DistanceError("no grid node within the sampling radius")
    h = float(_local_cell(grid)[ball].max())
    if 2 * h >= radius:
        raise DistanceError(f"grid too coarse: 2h = {2 * h:.3g} >= radius {radius:g}")
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform((2 * h) ** 2, radius**2, n))
    ang = rng.uniform(0, TWO_PI, n)
    z = np.stack([r * np.cos(ang), r * np.sin(ang)], -1)
    pts = x0 + z
    keep = problem.domain.contains(pts[:, 0], pts[:, 1])
    pts, z = pts[keep], z[keep]
    Wx = interpolate(grid, W, pts) - float(interpolate(grid, W, x0[None, :])[0])
    Ws_m, Ws_p, Wp_m, Wp_p = chart_gradients(grid, W)
    g = np.linalg.norm(_cartesian(grid, np.maximum(np.abs(Ws_m), np.abs(Ws_p)),
                                  np.maximum(np.abs(Wp_m), np.abs(Wp_p))), axis=-1)
    near = dist <= radius + 2 * h
    lip = float(g[near].max())
    slack = 2 * h * lip
    lo = pair.minus(pts) - slack
    hi = pair.plus(pts) + slack
    bad_lo = Wx < lo
    bad_hi = Wx > hi
    viol = int(np.sum(bad_lo | bad_hi))
    margin = np.minimum(Wx - lo, hi - Wx)
    i = int(np.argmin(margin))
    worst = {"z": z[i].tolist(), "W": float(Wx[i]), "lower": float(lo[i]),
             "upper": float(hi[i]), "margin": float(margin[i])}
    return LocalBoundsReport(pair.delta, int(len(pts)), viol, worst, slack, lip, h)


def downstream_cost(problem: ProblemInstance, field: DistanceField, starts, t_final: float = 5.0,
                    dt: float = 0.01) -> np.ndarray:
    """``d(x0) - d(x(T))`` along the drift; zero cost means this is <= O(h)."""
    drift = Drift(problem)
    X = np.array(starts, dtype=float)
    for _ in range(int(round(t_final / dt))):
        k1 = drift(X)
        k2 = drift(X + 0.5 * dt * k1)
        k3 = drift(X + 0.5 * dt * k2)
        k4 = drift(X + dt * k3)
        Xn = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        # reflect: clamp into the closed domain along the chart ray
        s, phi = problem.domain.to_chart(Xn[:, 0], Xn[:, 1])
        s = np.clip(s, 0.0, 1.0)
        Xn = np.stack(problem.domain.chart(s, phi), -1)
        X = Xn
    return field(np.asarray(starts, float)) - field(X)


def segment_action(problem: ProblemInstance, x, y, n: int = 200) -> float:
    """Geometric action of the straight segment from ``x`` to ``y`` (optimal speed)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    L = np.linalg.norm(y - x)
    if L == 0:
        return 0.0
    u = (y - x) / L
    t = (np.arange(n) + 0.5) / n
    P = x + t[:, None] * (y - x)
    b = problem.drift(P[:, 0], P[:, 1])
    A = np.linalg.inv(problem.a_matrix(P[:, 0], P[:, 1]))
    bn = np.sqrt(np.einsum("ti,tij,tj->t", b, A, b))
    un = np.sqrt(np.einsum("i,tij,j->t", u, A, u))
    bu = np.einsum("ti,tij,j->t", b, A, u)
    return float(np.sum(0.5 * (bn * un - bu)) * L / n)
