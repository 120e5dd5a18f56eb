"""Component scores ``sigma(A_k)`` and the predicted limit eigenvalue."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import AubryComponent, Kind, cycle_average
from .problem import ProblemInstance

POSITIVE_TOL = 1e-8
UNIQUENESS_GAP = 1e-9


class SigmaError(ValueError):
    pass


@dataclass
class SigmaTerm:
    component: AubryComponent
    sigma: float
    exponent_term: float  # the subtracted sum of positive exponents (per unit time)
    c_term: float  # c at the point, or its cycle average

    def to_dict(self) -> dict:
        return {"component": self.component.label(), "kind": self.component.kind.value,
                "sigma": self.sigma, "exponent_term": self.exponent_term,
                "c_term": self.c_term}


@dataclass
class SigmaReport:
    terms: list[SigmaTerm]
    lambda0: float
    argmax: int
    unique: bool
    gap: float
    maximizers: list[int] = field(default_factory=list)

    @property
    def maximizer(self) -> AubryComponent:
        return self.terms[self.argmax].component

    def to_dict(self) -> dict:
        return {
            "components": [t.to_dict() for t in self.terms],
            "lambda0": self.lambda0,
            "argmax": self.argmax,
            "maximizer": self.terms[self.argmax].component.label(),
            "unique": self.unique,
            "gap": self.gap if np.isfinite(self.gap) else None,
            "tied": [self.terms[i].component.label() for i in self.maximizers],
        }


def sigma_terms(component: AubryComponent, problem: ProblemInstance) -> SigmaTerm:
    """Score of one component with its breakdown into exponent and ``c`` parts."""
    k = component.kind
    if k is Kind.INTERIOR_POINT:
        if component.theta is None:
            raise SigmaError("interior fixed point without eigenvalues")
        re = np.real(component.theta)
        expo = float(np.sum(re[re > POSITIVE_TOL]))
        cval = float(problem.c(*component.location))
    elif k is Kind.BOUNDARY_POINT:
        if component.theta_tilde is None:
            raise SigmaError("boundary fixed point without tangential exponent")
        th = np.atleast_1d(component.theta_tilde)
        expo = float(np.sum(th[th > POSITIVE_TOL]))
        cval = float(problem.c(*component.location))
    elif k is Kind.INTERIOR_CYCLE:
        if component.Theta is None or component.period is None:
            raise SigmaError("cycle without Floquet data")
        Th = np.asarray(component.Theta, dtype=float)
        big = Th[Th > 1.0 + POSITIVE_TOL]
        expo = float(np.sum(np.log(big)) / component.period)
        cval = cycle_average(problem, component, problem.c)
    elif k is Kind.BOUNDARY_CYCLE:
        # in the plane the boundary is a curve: no transverse multipliers
        Th = np.asarray(component.Theta if component.Theta is not None else [], dtype=float)
        big = Th[Th > 1.0 + POSITIVE_TOL]
        expo = float(np.sum(np.log(big)) / component.period) if big.size else 0.0
        cval = cycle_average(problem, component, problem.c)
    else:  # pragma: no cover
        raise SigmaError(f"unknown component kind {k}")
    return SigmaTerm(component, cval - expo, expo, cval)


def sigma_of(component: AubryComponent, problem: ProblemInstance) -> float:
    return sigma_terms(component, problem).sigma


def predict_limit(components: list[AubryComponent], problem: ProblemInstance) -> SigmaReport:
    """``lambda0 = max sigma``; the maximizer is unique when the gap exceeds 1e-9."""
    if not components:
        raise SigmaError("no Aubry components to score")
    terms = [sigma_terms(c, problem) for c in components]
    vals = np.array([t.sigma for t in terms])
    i = int(np.argmax(vals))
    lam0 = float(vals[i])
    tied = [j for j, v in enumerate(vals) if lam0 - v <= UNIQUENESS_GAP]
    rest = np.delete(vals, i)
    gap = float(lam0 - rest.max()) if rest.size else float("inf")
    return SigmaReport(terms, lam0, i, gap > UNIQUENESS_GAP, gap, tied)
