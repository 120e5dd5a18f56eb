"""Numerical laboratory for small-diffusion principal eigenvalue asymptotics."""

from .expr import FieldExpr, parse_field, eval_grad
from .geometry import DomainGeometry, disk, annulus, star
from .problem import ProblemInstance, catalog, CATALOG_NAMES, load_problem, hamiltonian, lagrangian

__all__ = [
    "FieldExpr", "parse_field", "eval_grad",
    "DomainGeometry", "disk", "annulus", "star",
    "ProblemInstance", "catalog", "CATALOG_NAMES", "load_problem",
    "hamiltonian", "lagrangian",
]
