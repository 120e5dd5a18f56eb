"""Problem instances: domain plus coefficient fields ``a``, ``b``, ``c``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .expr import FieldExpr, as_field, eval_grad
from .geometry import DomainGeometry, disk, domain_from_dict

ELLIPTICITY_FLOOR = 1e-8


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    domain: DomainGeometry
    a: tuple[FieldExpr, FieldExpr, FieldExpr]  # a11, a12, a22
    b: tuple[FieldExpr, FieldExpr]
    c: FieldExpr

    # field evaluation (vectorized) ------------------------------------

    def a_matrix(self, x, y) -> np.ndarray:
        a11, a12, a22 = (np.broadcast_to(f(x, y), np.broadcast(x, y).shape)
                         for f in self.a)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def drift(self, x, y) -> np.ndarray:
        shape = np.broadcast(x, y).shape
        return np.stack([np.broadcast_to(f(x, y), shape) for f in self.b], -1)

    def c_value(self, x, y):
        return self.c(x, y)

    def drift_jacobian(self, point) -> np.ndarray:
        """``B[i, j] = d b_i / d x_j`` by central differences."""
        return np.array([eval_grad(f, point) for f in self.b])

    def divergence(self, point) -> float:
        return float(np.trace(self.drift_jacobian(point)))

    def check_ellipticity(self, x, y) -> float:
        """Smallest eigenvalue of ``a`` over the given points; raises below the floor."""
        lam = np.linalg.eigvalsh(self.a_matrix(np.ravel(x), np.ravel(y)))
        lo = float(lam.min())
        if not lo >= ELLIPTICITY_FLOOR:
            raise EllipticityError(
                f"{self.name}: a(x) not uniformly elliptic (min eigenvalue {lo:.3e})")
        return lo

    def with_c(self, c_source: str, name: str | None = None) -> "ProblemInstance":
        return ProblemInstance(name or self.name, self.domain, self.a, self.b,
                               as_field(c_source))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": self.domain.describe(),
            "a": [f.source for f in self.a],
            "b": [f.source for f in self.b],
            "c": self.c.source,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def hamiltonian(problem: ProblemInstance, p, x) -> float:
    """H(p, x) = a_ij p_i p_j - b_i p_i."""
    p = np.asarray(p, dtype=float)
    a = problem.a_matrix(x[0], x[1])
    b = problem.drift(x[0], x[1])
    return float(p @ a @ p - b @ p)


def lagrangian(problem: ProblemInstance, v, x) -> float:
    """Legendre transform of ``H``: ``(v + b)^T a^{-1} (v + b) / 4``."""
    v = np.asarray(v, dtype=float)
    a = problem.a_matrix(x[0], x[1])
    if np.linalg.eigvalsh(a).min() < ELLIPTICITY_FLOOR:
        raise EllipticityError("singular diffusion matrix")
    w = v + problem.drift(x[0], x[1])
    return float(0.25 * w @ np.linalg.solve(a, w))


def problem_from_dict(spec: dict) -> ProblemInstance:
    a = spec.get("a", ["1", "0", "1"])
    if len(a) != 3 or len(spec["b"]) != 2:
        raise ValueError("a needs [a11, a12, a22] and b needs [b1, b2]")
    return ProblemInstance(
        name=str(spec.get("name", "custom")),
        domain=domain_from_dict(spec["domain"]),
        a=tuple(as_field(s) for s in a),
        b=tuple(as_field(s) for s in spec["b"]),
        c=as_field(spec["c"]),
    )


def problem_from_json(text: str) -> ProblemInstance:
    return problem_from_dict(json.loads(text))


# J(x1, x2) = (-x2, x1): counterclockwise rotation by 90 degrees.
_CATALOG = {
    "P0_constant": dict(R=1.0, b=("1", "0"), c="3"),
    "P1_attractor": dict(R=1.0, b=("-x", "-y"), c="2 - (x^2 + y^2)"),
    "P2_spiral_source": dict(R=1.0, b=("x - y", "y + x"), c="4*exp(-(x^2 + y^2))"),
    "P3_drift": dict(R=1.0, b=("1", "0"), c="x"),
    "P4_hopf_cycle": dict(
        R=2.0,
        b=("(1 - (x^2 + y^2))*x - y", "(1 - (x^2 + y^2))*y + x"),
        c="4*exp(-(x^2 + y^2))",
    ),
    "P4r_reversed_hopf": dict(
        R=2.0,
        b=("-(1 - (x^2 + y^2))*x + y", "-(1 - (x^2 + y^2))*y - x"),
        c="0",
    ),
}

CATALOG_NAMES = tuple(_CATALOG)


def catalog(name: str) -> ProblemInstance:
    try:
        entry = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog problem {name!r}; "
                       f"choose from {', '.join(CATALOG_NAMES)}") from None
    return ProblemInstance(
        name=name,
        domain=disk(entry["R"]),
        a=(as_field("1"), as_field("0"), as_field("1")),
        b=tuple(as_field(s) for s in entry["b"]),
        c=as_field(entry["c"]),
    )


def load_problem(ref: str) -> ProblemInstance:
    """Catalog name (or its short prefix such as ``P4``), inline JSON, or a JSON path."""
    if ref in _CATALOG:
        return catalog(ref)
    short = [n for n in CATALOG_NAMES if n.split("_")[0] == ref]
    if len(short) == 1:
        return catalog(short[0])
    text = ref.strip()
    if text.startswith("{"):
        return problem_from_json(text)
    with open(ref) as fh:
        return problem_from_json(fh.read())
