import numpy as np
import pytest

from speclab import catalog
from speclab.expr import as_field
from speclab.flow import (Kind, NoCycleFound, _rk4_flow, Drift, boundary_flow_components,
                          cycle_average, find_interior_cycle, find_interior_fixed_points)


def _only(comps, kind):
    out = [c for c in comps if c.kind is kind]
    assert len(out) == 1, [c.label() for c in comps]
    return out[0]


def test_attractor_fixed_point():
    (pt,) = find_interior_fixed_points(catalog("P1_attractor"))
    np.testing.assert_allclose(pt.location, 0, atol=1e-12)
    np.testing.assert_allclose(sorted(np.real(pt.theta)), [-1, -1], atol=1e-8)


def test_spiral_source_fixed_point():
    (pt,) = find_interior_fixed_points(catalog("P2_spiral_source"))
    np.testing.assert_allclose(pt.B, [[1, -1], [1, 1]], atol=1e-8)
    np.testing.assert_allclose(np.real(pt.theta), [1, 1], atol=1e-8)


def test_no_fixed_points_for_uniform_drift():
    assert find_interior_fixed_points(catalog("P3_drift")) == []


@pytest.mark.parametrize("name", ["P1_attractor", "P2_spiral_source", "P4_hopf_cycle"])
def test_fixed_points_are_roots(name):
    p = catalog(name)
    for c in find_interior_fixed_points(p):
        assert np.linalg.norm(p.drift(*c.location)) <= 1e-10


def test_boundary_fixed_point_of_uniform_drift(flows):
    p, out = flows("P3_drift")
    bp = _only(out["components"], Kind.BOUNDARY_POINT)
    np.testing.assert_allclose(bp.location, [1, 0], atol=1e-10)
    assert bp.theta_tilde == pytest.approx(-1.0, abs=1e-8)
    assert bp.b_nu_range[0] == pytest.approx(1.0, abs=1e-8)
    (ex,) = out["excluded"]
    np.testing.assert_allclose(ex["location"], [-1, 0], atol=1e-10)
    assert ex["b_nu"] == pytest.approx(-1.0)


def test_boundary_cycle_of_spiral_source(flows):
    p, out = flows("P2_spiral_source")
    bc = _only(out["components"], Kind.BOUNDARY_CYCLE)
    assert bc.period == pytest.approx(2 * np.pi, abs=1e-8)
    np.testing.assert_allclose(bc.b_nu_range, [1, 1], atol=1e-8)
    assert cycle_average(p, bc, p.c) == pytest.approx(4 / np.e, abs=1e-8)
    assert cycle_average(p, bc, as_field("1")) == pytest.approx(1.0, abs=1e-12)


def test_no_boundary_components_for_inward_drift():
    assert boundary_flow_components(catalog("P1_attractor")) == []
    assert boundary_flow_components(catalog("P4_hopf_cycle")) == []


@pytest.fixture(scope="module")
def hopf():
    p = catalog("P4_hopf_cycle")
    return p, find_interior_cycle(p, (1.5, 0.0))


def test_hopf_cycle(hopf):
    p, cyc = hopf
    assert cyc.kind is Kind.INTERIOR_CYCLE
    assert cyc.period == pytest.approx(2 * np.pi, rel=1e-8)
    np.testing.assert_allclose(np.linalg.norm(cyc.orbit, axis=-1), 1.0, atol=1e-6)
    assert cyc.Theta[0] == pytest.approx(np.exp(-4 * np.pi), rel=1e-6)
    assert cycle_average(p, cyc, p.c) == pytest.approx(4 / np.e, abs=1e-8)


def test_hopf_cycle_certificates(hopf):
    p, cyc = hopf
    cert = cyc.certificates
    assert cert["closure_gap"] <= 1e-8
    assert cert["abel_liouville_rel_err"] <= 1e-6
    assert cert["trivial_multiplier_dev"] <= 1e-6
    # independent re-integration of one period from the stored initial point
    xT, *_ = _rk4_flow(Drift(p), cyc.orbit[0], cyc.period, 8000, variational=False)
    assert np.linalg.norm(xT - cyc.orbit[0]) <= 1e-8


def test_time_reversal_inverts_multipliers(hopf):
    _, cyc = hopf
    rev = find_interior_cycle(catalog("P4r_reversed_hopf"), (1.5, 0.0))
    assert rev.Theta[0] * cyc.Theta[0] == pytest.approx(1.0, rel=1e-5)


def test_attractor_has_no_cycle():
    with pytest.raises(NoCycleFound):
        find_interior_cycle(catalog("P1_attractor"), (0.5, 0.2))


def test_component_list_is_deterministic(flows):
    from speclab.flow import analyze_flow
    p, out = flows("P2_spiral_source")
    again = analyze_flow(p)
    assert [c.to_dict() for c in again["components"]] == [c.to_dict() for c in out["components"]]
