"""Polar node lattice shared by the eigensolver and the distance solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import TWO_PI, DomainGeometry

MIN_NODES = 8


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PolarGrid:
    """Cell-centred lattice ``s_j = (j + 1/2)/n_r``, ``phi_k = k * 2 pi / n_phi``.

    Node ``(j, k)`` has flat index ``j * n_phi + k``.  No node sits on the
    boundary or at the centre; the angular index wraps.
    """

    domain: DomainGeometry
    n_r: int
    n_phi: int
    s: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_r < MIN_NODES or self.n_phi < MIN_NODES:
            raise GridError(f"grid too coarse: need at least {MIN_NODES} nodes per direction")
        if self.n_phi % 2:
            raise GridError("n_phi must be even (the centre closure pairs opposite rays)")
        s = (np.arange(self.n_r) + 0.5) / self.n_r
        phi = np.arange(self.n_phi) * (TWO_PI / self.n_phi)
        S, PHI = np.meshgrid(s, phi, indexing="ij")
        x, y = self.domain.chart(S, PHI)
        for name, val in (("s", s), ("phi", phi), ("x", x), ("y", y)):
            object.__setattr__(self, name, val)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_phi)

    @property
    def size(self) -> int:
        return self.n_r * self.n_phi

    @property
    def h_s(self) -> float:
        return 1.0 / self.n_r

    @property
    def h_phi(self) -> float:
        return TWO_PI / self.n_phi

    @property
    def h_radial(self) -> float:
        """Largest physical spacing between radial neighbours."""
        phi = np.linspace(0, TWO_PI, 512, endpoint=False)
        return float(np.max(self.domain.r_out(phi) - self.domain.r_in(phi)) / self.n_r)

    @property
    def h(self) -> float:
        """Mesh size: largest physical spacing in either chart direction."""
        phi = np.linspace(0, TWO_PI, 512, endpoint=False)
        return max(self.h_radial, float(np.max(self.domain.r_out(phi))) * self.h_phi)

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.x.ravel(), self.y.ravel()], -1)

    @property
    def boundary_adjacent(self) -> np.ndarray:
        flag = np.zeros(self.shape, dtype=bool)
        flag[-1, :] = True
        if self.domain.is_annulus:
            flag[0, :] = True
        return flag

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    def index(self, j, k):
        return np.asarray(j) * self.n_phi + np.mod(k, self.n_phi)

    def refine(self) -> "PolarGrid":
        return PolarGrid(self.domain, 2 * self.n_r, 2 * self.n_phi)


def make_grid(domain: DomainGeometry, n: int | tuple[int, int]) -> PolarGrid:
    if isinstance(n, tuple):
        return PolarGrid(domain, *n)
    return PolarGrid(domain, n, n)
