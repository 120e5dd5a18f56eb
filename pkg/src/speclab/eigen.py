"""Principal Neumann eigenpair of ``eps a:D^2 u + b.grad u + c u`` on a polar grid."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import PolarGrid
from .problem import ProblemInstance

log = logging.getLogger(__name__)

SCHEMES = ("fitted", "upwind")
LAMBDA_TOL = 1e-8


class EigenError(RuntimeError):
    pass


@dataclass
class SparseOperator:
    """Assembled operator plus the data needed to reuse it."""

    matrix: sp.csr_matrix
    grid: PolarGrid
    epsilon: float
    c: np.ndarray  # zero-order coefficient at the nodes, shape grid.shape
    scheme: str
    stencil: dict = field(default_factory=dict)

    @property
    def shift(self) -> float:
        return float(self.c.max()) + 1.0

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix @ u.ravel()).reshape(self.grid.shape)


@dataclass
class EigenPair:
    epsilon: float
    lam: float
    u: np.ndarray
    W: np.ndarray
    iterations: int
    residual: float
    grid: PolarGrid = field(repr=False)
    c_range: tuple[float, float] = (np.nan, np.nan)

    def metadata(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "iterations": self.iterations,
            "residual": self.residual,
            "grid": [self.grid.n_r, self.grid.n_phi],
        }


def _coth_weights(D, beta, h, scheme):
    """Neighbour weights ``(w_plus, w_minus)`` for ``D u'' + beta u'`` on spacing ``h``.

    ``fitted`` is the exponentially fitted (Il'in-Allen-Southwell) central
    scheme: exact for ``exp(-beta x / D)`` and always of positive type.
    ``upwind`` is plain first-order upwinding of the drift.
    """
    if scheme == "upwind":
        return D / h**2 + np.maximum(beta, 0) / h, D / h**2 + np.maximum(-beta, 0) / h
    pe = beta * h / (2 * D)
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = np.where(np.abs(pe) < 1e-8, 1.0, pe / np.tanh(pe))
    # large |pe|: pe*coth(pe) -> |pe|; avoid overflow noise
    fit = np.where(np.abs(pe) > 350, np.abs(pe), fit)
    Deff = D * fit
    return Deff / h**2 + beta / (2 * h), Deff / h**2 - beta / (2 * h)


def chart_coefficients(problem: ProblemInstance, grid: PolarGrid, epsilon: float):
    """Second- and first-order coefficients of the operator in ``(s, phi)``.

    Returns ``G`` (``..., 2, 2``; times ``epsilon``), ``beta`` (``..., 2``)
    and the tangential slope ``m = grad(phi).grad(s) / |grad s|^2`` used by
    the Neumann ghost rule.
    """
    S, PHI = np.meshgrid(grid.s, grid.phi, indexing="ij")
    Tinv, X2 = grid.domain.chart_metric(S, PHI)
    a = problem.a_matrix(grid.x, grid.y)
    b = problem.drift(grid.x, grid.y)
    G = np.einsum("...ki,...ij,...lj->...kl", Tinv, a, Tinv)
    # a : Hess(xi_k) = -Tinv_km X2_m,pq G_pq
    g = -np.einsum("...km,...mpq,...pq->...k", Tinv, X2, G)
    beta = np.einsum("...ki,...i->...k", Tinv, b) + epsilon * g
    grad_s, grad_p = Tinv[..., 0, :], Tinv[..., 1, :]
    m = np.sum(grad_p * grad_s, -1) / np.sum(grad_s * grad_s, -1)
    return epsilon * G, beta, m


def assemble(problem: ProblemInstance, epsilon: float, grid: PolarGrid,
             scheme: str = "fitted", c_override: np.ndarray | None = None) -> SparseOperator:
    """Assemble the discrete operator with Neumann ghost closure.

    Off-diagonal entries are nonnegative (the shifted matrix is an
    M-matrix) and rows annihilate constants up to the ``c`` diagonal.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    problem.check_ellipticity(grid.x, grid.y)
    nr, nphi = grid.shape
    hs, hp = grid.h_s, grid.h_phi
    G, beta, m = chart_coefficients(problem, grid, epsilon)

    ws_p, ws_m = _coth_weights(G[..., 0, 0], beta[..., 0], hs, scheme)
    wp_p, wp_m = _coth_weights(G[..., 1, 1], beta[..., 1], hp, scheme)

    # mixed derivative: positive-type 7-point stencil chosen by sign
    c12 = G[..., 0, 1]
    xw = np.abs(c12) / (hs * hp)
    ws_p = ws_p - xw
    ws_m = ws_m - xw
    wp_p = wp_p - xw
    wp_m = wp_m - xw
    patched = 0
    for wp, wm in ((ws_p, ws_m), (wp_p, wp_m)):
        deficit = np.maximum(-np.minimum(wp, wm), 0.0)
        patched += int(np.count_nonzero(deficit))
        wp += deficit
        wm += deficit

    rows, cols, vals = [], [], []
    nbr = _NeighbourMap(grid, m)
    for (dj, dk, w) in ((1, 0, ws_p), (-1, 0, ws_m), (0, 1, wp_p), (0, -1, wp_m)):
        r, cc, v = nbr.entries(dj, dk, w)
        rows.append(r)
        cols.append(cc)
        vals.append(v)
    pos = c12 > 0
    for (dj, dk) in ((1, 1), (-1, -1)):
        r, cc, v = nbr.entries(dj, dk, np.where(pos, xw, 0.0))
        rows.append(r)
        cols.append(cc)
        vals.append(v)
    for (dj, dk) in ((1, -1), (-1, 1)):
        r, cc, v = nbr.entries(dj, dk, np.where(~pos, xw, 0.0))
        rows.append(r)
        cols.append(cc)
        vals.append(v)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = grid.size
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    # self-references created by ghost folding move to the diagonal
    diag_self = off.diagonal()
    off = off - sp.diags(diag_self)
    off.eliminate_zeros()
    rowsum = np.asarray(off.sum(axis=1)).ravel()
    if c_override is None:
        c = np.broadcast_to(problem.c_value(grid.x, grid.y), grid.shape).astype(float)
    else:
        c = np.asarray(c_override, dtype=float).reshape(grid.shape)
    A = (off + sp.diags(c.ravel() - rowsum)).tocsr()
    stencil = {
        "scheme": scheme,
        "mixed_patched_nodes": patched,
        "ghost_clamped_nodes": nbr.clamped,
        "nnz": int(A.nnz),
    }
    return SparseOperator(A, grid, float(epsilon), c, scheme, stencil)


class _NeighbourMap:
    """Maps stencil offsets to columns, folding ghosts onto interior nodes.

    Outer (and inner, for annuli) ghosts use the Neumann mirror
    ``u_ghost = u_edge - h_s m u_phi`` with ``u_phi`` one-sided so that the
    folded weights stay nonnegative.  Below ``s = 0`` on a disk the
    neighbour is the node on the opposite ray.
    """

    def __init__(self, grid: PolarGrid, m: np.ndarray):
        self.grid = grid
        self.m = m
        self.clamped = 0
        nr, nphi = grid.shape
        self.J, self.K = np.meshgrid(np.arange(nr), np.arange(nphi), indexing="ij")

    def entries(self, dj, dk, w):
        g = self.grid
        nr, nphi = g.shape
        J, K = self.J, self.K
        w = np.broadcast_to(w, J.shape)
        keep = w != 0
        r_all, c_all, v_all = [], [], []
        jn = J + dj
        kn = K + dk
        inside = (jn >= 0) & (jn < nr) & keep
        r_all.append(g.index(J[inside], K[inside]))
        c_all.append(g.index(jn[inside], kn[inside]))
        v_all.append(w[inside])

        # radial ghosts
        for ghost, edge in ((jn >= nr, nr - 1), (jn < 0, 0)):
            mask = ghost & keep
            if not np.any(mask):
                continue
            if edge == 0 and not g.domain.is_annulus:
                # across the centre
                r_all.append(g.index(J[mask], K[mask]))
                c_all.append(g.index(np.zeros(mask.sum(), int), kn[mask] + nphi // 2))
                v_all.append(w[mask])
                continue
            kk = kn[mask]
            if dk != 0:
                # mixed-stencil corners: plain mirror
                r_all.append(g.index(J[mask], K[mask]))
                c_all.append(g.index(np.full(mask.sum(), edge), kk))
                v_all.append(w[mask])
                continue
            mm = self.m[edge, np.mod(kk, nphi)]
            # inner ghost sits at s < 0, so the mirror sign flips
            sign = 1.0 if edge == nr - 1 else -1.0
            kappa = sign * g.h_s * mm / g.h_phi
            over = np.abs(kappa) > 1
            self.clamped += int(np.count_nonzero(over))
            kappa = np.clip(kappa, -1.0, 1.0)
            side = np.where(kappa > 0, -1, 1)
            rows = g.index(J[mask], K[mask])
            r_all += [rows, rows]
            c_all += [g.index(np.full(mask.sum(), edge), kk),
                      g.index(np.full(mask.sum(), edge), kk + side)]
            v_all += [w[mask] * (1 - np.abs(kappa)), w[mask] * np.abs(kappa)]
        return np.concatenate(r_all), np.concatenate(c_all), np.concatenate(v_all)


# --- eigen iteration -------------------------------------------------------

def _factor(A: sp.csr_matrix, shift: float):
    M = (shift * sp.identity(A.shape[0], format="csc") - A.tocsc()).tocsc()
    try:
        return spla.splu(M, permc_spec="COLAMD")
    except RuntimeError as exc:  # singular factor
        raise EigenError(f"factorization failed: {exc}") from exc


def _inverse_iteration(A, shift, max_iter, tol_lambda, lam_hint=None):
    """Perron pair of the Metzler matrix ``A`` by shifted inverse iteration.

    Starts from the given shift (above the Perron root, so the shifted
    matrix is an M-matrix and the Perron vector dominates its inverse);
    once the estimate settles, the shift moves closer while staying above.
    Returns ``(lam, u, iterations, lu, shift)``.
    """
    refined = False
    if lam_hint is not None:
        # hint is accurate to ~tol_lambda; stay well above the Perron root
        shift = lam_hint + 0.05 * (shift - lam_hint)
        refined = True
    lu = _factor(A, shift)
    u = np.ones(A.shape[0])
    lam = lam_prev = np.nan
    dlam = np.inf
    for it in range(1, max_iter + 1):
        v = lu.solve(u)
        vmax = np.max(np.abs(v))
        if not np.isfinite(vmax) or vmax == 0:
            raise EigenError("inverse iteration broke down")
        lam = shift - 1.0 / vmax
        u = v / vmax
        dlam = abs(lam - lam_prev)
        lam_prev = lam
        if not refined and it >= 3 and dlam < 1e-4 * (1 + abs(lam)):
            new_shift = lam + max(0.05 * (shift - lam), 100 * dlam, 1e-6)
            if new_shift < shift:
                shift = new_shift
                lu = _factor(A, shift)
                refined = True
                lam_prev = np.nan
                continue
        if dlam < tol_lambda:
            return float(lam), u, it, lu, shift
    raise EigenError(f"inverse iteration did not converge in {max_iter} iterations "
                     f"(|dlambda|={dlam:.2e})")


def _rescaled(A: sp.csr_matrix, logd: np.ndarray) -> sp.csr_matrix:
    """``D^{-1} A D`` with ``D = exp(logd)``, formed from log differences."""
    coo = A.tocoo()
    vals = coo.data * np.exp(logd[coo.col] - logd[coo.row])
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=A.shape)


def _polish(At, lu, shift, v, steps=3):
    """Inverse-iteration steps with iterative refinement in extended precision.

    Rows near the polar centre carry couplings ~1e8, so a vector rounded to
    double already has residual ~1e-8; the refined vector is kept in
    ``np.longdouble``.
    """
    ld = np.longdouble
    M = (ld(shift) * sp.identity(At.shape[0], format="csr", dtype=ld)
         - At.astype(ld)).tocsr()
    u = np.asarray(v, dtype=ld)
    u /= u.max()
    lam = None
    for _ in range(steps):
        w = lu.solve(np.asarray(u, dtype=float)).astype(ld)
        for _ in range(2):
            r = u - M @ w
            w += lu.solve(np.asarray(r, dtype=float)).astype(ld)
        wmax = w.max()
        lam = ld(shift) - 1 / wmax
        u = w / wmax
    return lam, u


def principal_eigenpair(op: SparseOperator, max_iter: int = 500,
                        tol_lambda: float = 1e-10, tol_residual: float = 1e-8,
                        max_rescale: int = 8) -> EigenPair:
    """Maximal-real-part eigenpair with ``max u = 1`` and ``W = -eps log u``.

    Principal eigenvectors of singularly perturbed problems span hundreds of
    orders of magnitude, far below what a max-normalized double vector can
    carry.  After a plain inverse-iteration pass the vector is kept in log
    form and the iteration is repeated on the diagonally similar matrix
    ``D^{-1} A D`` (same spectrum, same sign pattern) with ``D`` the previous
    eigenvector, until the correction is flat.  Each pass resolves another
    ~12 decades of the tail.
    """
    A = op.matrix
    shift = op.shift
    lam, u, iters, lu, sh = _inverse_iteration(A, shift, max_iter, tol_lambda)
    logu = np.log(np.maximum(u, 1e-12))
    At = A
    v = u
    for _ in range(max_rescale):
        At = _rescaled(A, logu)
        lam, v, it, lu, sh = _inverse_iteration(At, shift, max_iter, tol_lambda,
                                                lam_hint=lam)
        iters += it
        if np.any(v <= 0):
            raise EigenError("rescaled eigenvector is not strictly positive")
        logv = np.log(v)
        if np.ptp(logv) < 1e-9:
            break
        logu = logu + logv
        logu -= logu.max()
    lam_ld, v_ld = _polish(At, lu, sh, v)
    if np.any(v_ld <= 0):
        raise EigenError("eigenvector is not strictly positive")
    logu_ld = logu.astype(np.longdouble) + np.log(v_ld)
    logu_ld -= logu_ld.max()
    u_ld = np.exp(logu_ld)
    lam = float(lam_ld)
    residual = float(np.max(np.abs(A.astype(np.longdouble) @ u_ld - lam_ld * u_ld)))
    if residual > tol_residual * (1 + abs(lam)):
        raise EigenError(f"residual certificate failed: {residual:.2e}")
    cmin, cmax = float(op.c.min()), float(op.c.max())
    if not (cmin - LAMBDA_TOL <= lam <= cmax + LAMBDA_TOL):
        raise EigenError(f"eigenvalue {lam} outside [min c, max c] = [{cmin}, {cmax}]")
    W = np.asarray(-op.epsilon * logu_ld, dtype=float).reshape(op.grid.shape)
    u = np.asarray(u_ld, dtype=float).reshape(op.grid.shape)
    return EigenPair(op.epsilon, lam, u, W, iters, residual, op.grid, (cmin, cmax))


def solve(problem: ProblemInstance, epsilon: float, grid: PolarGrid,
          scheme: str = "fitted") -> EigenPair:
    return principal_eigenpair(assemble(problem, epsilon, grid, scheme))


def _distance_to(pts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    d = np.full(len(pts), np.inf)
    for chunk in np.array_split(targets, max(1, len(targets) // 256)):
        dd = np.linalg.norm(pts[:, None, :] - chunk[None, :, :], axis=-1).min(axis=1)
        d = np.minimum(d, dd)
    return d


def penalty_field(grid_points: np.ndarray, keep_points: np.ndarray, kappa: float,
                  delta_rho: float = 0.2, dead_radius: float | None = None) -> np.ndarray:
    """``kappa * smoothstep`` of the distance to ``keep``.

    Zero within ``dead_radius`` of the kept component (default ``delta_rho / 4``),
    ``kappa`` beyond ``dead_radius + delta_rho``, C^1 in between.
    """
    pts = np.asarray(grid_points, dtype=float).reshape(-1, 2)
    keep = np.asarray(keep_points, dtype=float).reshape(-1, 2)
    d = _distance_to(pts, keep)
    r0 = 0.25 * delta_rho if dead_radius is None else float(dead_radius)
    if not np.isfinite(r0):
        return np.zeros(len(pts))
    t = np.clip((d - r0) / delta_rho, 0.0, 1.0)
    return kappa * t * t * (3 - 2 * t)


def dead_radius_between(keep_points: np.ndarray, other_points) -> float:
    """Half the distance from the kept component to the nearest other one.

    A penalty that vanishes on this neighbourhood leaves room for the
    ``sqrt(eps)`` profile of the eigenfunction while staying positive on
    every other component.
    """
    others = [np.asarray(o, dtype=float).reshape(-1, 2) for o in other_points]
    if not others:
        return float("inf")
    keep = np.asarray(keep_points, dtype=float).reshape(-1, 2)
    return 0.5 * float(min(_distance_to(o, keep).min() for o in others))


def penalized_eigenpair(problem: ProblemInstance, epsilon: float, grid: PolarGrid,
                        keep_points: np.ndarray, kappa: float = 1.0,
                        scheme: str = "fitted", delta_rho: float = 0.2,
                        other_points=None) -> EigenPair:
    """Eigenpair with ``c`` replaced by ``c - rho / epsilon``.

    With ``other_points`` (the remaining components) the zero set of ``rho``
    is the ball of :func:`dead_radius_between`; otherwise it is ``delta_rho / 4``.
    """
    r0 = None if other_points is None else dead_radius_between(keep_points, other_points)
    rho = penalty_field(grid.points, keep_points, kappa, delta_rho, r0).reshape(grid.shape)
    c = np.broadcast_to(problem.c_value(grid.x, grid.y), grid.shape) - rho / epsilon
    return principal_eigenpair(assemble(problem, epsilon, grid, scheme, c_override=c))


# --- diagnostics -----------------------------------------------------------

def chart_gradient(grid: PolarGrid, f: np.ndarray, one_sided: str = "max") -> np.ndarray:
    """Cartesian gradient magnitude from one-sided chart differences.

    ``one_sided='max'`` takes, per direction, the larger of the forward and
    backward difference magnitudes (a conservative upwind bound).
    """
    hs, hp = grid.h_s, grid.h_phi
    fs_f = np.diff(f, axis=0, append=f[-1:, :]) / hs
    fs_b = np.diff(f, axis=0, prepend=f[:1, :]) / hs
    fp_f = (np.roll(f, -1, axis=1) - f) / hp
    fp_b = (f - np.roll(f, 1, axis=1)) / hp
    fs = np.where(np.abs(fs_f) > np.abs(fs_b), fs_f, fs_b)
    fp = np.where(np.abs(fp_f) > np.abs(fp_b), fp_f, fp_b)
    S, PHI = np.meshgrid(grid.s, grid.phi, indexing="ij")
    Tinv, _ = grid.domain.chart_metric(S, PHI)
    g = fs[..., None] * Tinv[..., 0, :] + fp[..., None] * Tinv[..., 1, :]
    return np.linalg.norm(g, axis=-1)


def gradient_bound_diagnostic(pairs: list[EigenPair]) -> dict:
    """Max upwind ``|grad W_eps|`` per solve; warns if it grows as eps shrinks."""
    vals = {float(p.epsilon): float(np.max(chart_gradient(p.grid, p.W))) for p in pairs}
    eps_sorted = sorted(vals, reverse=True)
    seq = [vals[e] for e in eps_sorted]
    bounded = all(v <= 2.0 * seq[0] + 1.0 for v in seq)
    if not bounded:
        warnings.warn(f"gradient of W_eps grows along the eps sweep: {seq}", RuntimeWarning)
    return {"eps": eps_sorted, "max_grad": seq, "bounded": bounded}


def extrapolate_linear(eps, lams, n_fit: int = 3) -> tuple[float, float]:
    """Least-squares ``lambda ~ lambda0 + C eps`` over the ``n_fit`` smallest eps."""
    eps = np.asarray(eps, dtype=float)
    lams = np.asarray(lams, dtype=float)
    order = np.argsort(eps)[:n_fit]
    e, l = eps[order], lams[order]
    if len(e) == 1:
        return float(l[0]), 0.0
    A = np.stack([np.ones_like(e), e], -1)
    (l0, slope), *_ = np.linalg.lstsq(A, l, rcond=None)
    return float(l0), float(slope)
