import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speclab.flow import Kind, analyze_flow
from speclab.sigma import predict_limit, sigma_of


def _by_kind(report, kind):
    return [t for t in report.terms if t.component.kind is kind]


def test_attractor(flows):
    p, out = flows("P1_attractor")
    rep = predict_limit(out["components"], p)
    assert rep.lambda0 == pytest.approx(2.0, abs=1e-10) and rep.unique


def test_spiral_source(flows):
    p, out = flows("P2_spiral_source")
    rep = predict_limit(out["components"], p)
    (pt,) = _by_kind(rep, Kind.INTERIOR_POINT)
    (bc,) = _by_kind(rep, Kind.BOUNDARY_CYCLE)
    assert pt.sigma == pytest.approx(2.0, abs=1e-8)
    assert bc.sigma == pytest.approx(4 / np.e, abs=1e-8)
    assert rep.maximizer is pt.component
    assert rep.gap == pytest.approx(2 - 4 / np.e, abs=1e-8)


def test_hopf(flows):
    p, out = flows("P4_hopf_cycle")
    rep = predict_limit(out["components"], p)
    (cy,) = _by_kind(rep, Kind.INTERIOR_CYCLE)
    assert cy.sigma == pytest.approx(4 / np.e, abs=1e-6)
    assert rep.lambda0 == pytest.approx(2.0, abs=1e-8)
    assert rep.gap == pytest.approx(0.5285, abs=1e-4)


def test_boundary_point(flows):
    p, out = flows("P3_drift")
    rep = predict_limit(out["components"], p)
    assert rep.lambda0 == pytest.approx(1.0, abs=1e-8)


def test_reversed_hopf_has_tied_maximizers(flows):
    p, out = flows("P4r_reversed_hopf")
    rep = predict_limit(out["components"], p)
    assert not rep.unique and len(rep.maximizers) >= 2


@settings(max_examples=8)
@given(k=st.floats(-5, 5))
def test_adding_a_constant_to_c_shifts_every_score(flows, k):
    p, out = flows("P2_spiral_source")
    q = p.with_c(f"4*exp(-(x^2 + y^2)) + {k!r}")
    base = predict_limit(out["components"], p)
    shifted = predict_limit(out["components"], q)
    for a, b in zip(base.terms, shifted.terms):
        assert b.sigma - a.sigma == pytest.approx(k, abs=1e-9)
    assert shifted.lambda0 - base.lambda0 == pytest.approx(k, abs=1e-9)


def test_sigma_of_matches_terms(flows):
    p, out = flows("P2_spiral_source")
    for c in out["components"]:
        assert sigma_of(c, p) == predict_limit([c], p).lambda0
