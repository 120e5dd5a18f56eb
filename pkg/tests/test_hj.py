import numpy as np
import pytest

from speclab import catalog
from speclab.flow import Kind
from speclab.grid import make_grid
from speclab.hj import (ValueIterationConfig, compose_W, downstream_cost, kink_band,
                        pairwise_distances, segment_action, solve_distance, verify_local_bounds,
                        viscosity_residual)
from speclab.riccati import build_test_functions
from speclab.sigma import predict_limit


def _point(out):
    return next(c for c in out["components"] if c.kind is Kind.INTERIOR_POINT)


@pytest.fixture(scope="module")
def fields(flows):
    cache = {}

    def get(name, n=64):
        if (name, n) not in cache:
            p, out = flows(name)
            g = make_grid(p.domain, n)
            fs = [solve_distance(p, c, g) for c in out["components"]]
            cache[(name, n)] = (p, out, g, fs)
        return cache[(name, n)]

    return get


def test_spiral_source_distance(fields):
    p, out, g, fs = fields("P2_spiral_source")
    d = fs[out["components"].index(_point(out))]
    exact = 0.5 * g.radius**2
    assert np.max(np.abs(d.values - exact)) <= 3 * g.h
    assert np.all(d.values >= 0) and np.all(d.values[d.tube] == 0)


def test_hopf_distance(fields):
    p, out, g, fs = fields("P4_hopf_cycle")
    d = fs[out["components"].index(_point(out))]
    r = g.radius
    exact = np.where(r <= 1, r**2 / 2 - r**4 / 4, 0.25)
    assert np.max(np.abs(d.values - exact)) <= 3 * g.h


def test_attractor_distance_vanishes(fields):
    p, out, g, (d,) = fields("P1_attractor")
    assert np.max(d.values) <= 3 * g.h * 1.0


def test_reflected_transport_is_free(fields):
    p, out, g, fs = fields("P3_drift")
    W = compose_W(out["components"], predict_limit(out["components"], p), fs)
    assert np.max(W.values) <= 3 * g.h


def test_composed_field_is_maximizer_distance(fields):
    p, out, g, fs = fields("P2_spiral_source")
    rep = predict_limit(out["components"], p)
    W = compose_W(out["components"], rep, fs)
    np.testing.assert_array_equal(W.values, fs[rep.argmax].values)
    assert W.maximizer == rep.maximizer.label()


def test_compose_refuses_tied_maximizers(flows):
    from speclab.hj import DistanceError
    p, out = flows("P4r_reversed_hopf")
    rep = predict_limit(out["components"], p)
    with pytest.raises(DistanceError):
        compose_W(out["components"], rep, [None] * len(out["components"]))


@pytest.mark.parametrize("name", ["P2_spiral_source", "P4_hopf_cycle"])
def test_distinct_components_are_separated(fields, name):
    p, out, g, fs = fields(name)
    D = pairwise_distances(out["components"], fs)
    n = len(fs)
    for j in range(n):
        for k in range(j + 1, n):
            assert D[j, k] + D[k, j] > 1e-3


def test_value_iteration_history_decreases_to_tolerance(fields):
    p, out, g, fs = fields("P2_spiral_source")
    for f in fs:
        assert f.history[-1] < ValueIterationConfig().tol
        assert all(u >= 0 for u in f.history)


def test_two_leg_paths_bound_the_distance(fields):
    p, out, g, fs = fields("P2_spiral_source")
    d = fs[out["components"].index(_point(out))]
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.uniform(-0.6, 0.6, size=(2, 2))
        cost = segment_action(p, x, y) + segment_action(p, y, np.zeros(2))
        assert d(x[None])[0] <= cost + 3 * g.h


@pytest.mark.parametrize("name", ["P1_attractor", "P4_hopf_cycle"])
def test_downstream_motion_is_free(fields, name):
    p, out, g, fs = fields(name)
    d = fs[out["components"].index(_point(out))]
    rng = np.random.default_rng(2)
    ang = rng.uniform(0, 2 * np.pi, 20)
    rad = rng.uniform(0.05, 0.9, 20) * p.domain.max_radius()
    starts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], -1)
    assert np.max(np.abs(downstream_cost(p, d, starts))) <= 5 * g.h


def test_zero_field_has_zero_residual():
    p = catalog("P3_drift")
    g = make_grid(p.domain, 32)
    rep = viscosity_residual(p, g, np.zeros(g.shape))
    assert rep.interior_max == 0.0


def test_analytic_residual_decays_first_order():
    p = catalog("P2_spiral_source")
    res = []
    for n in (64, 128):
        g = make_grid(p.domain, n)
        res.append(viscosity_residual(p, g, 0.5 * g.radius**2).interior_max)
    assert res[1] <= 0.6 * res[0]


def test_hopf_residual_away_from_kink(fields):
    p, out, g, fs = fields("P4_hopf_cycle", 128)
    d = fs[out["components"].index(_point(out))]
    band = kink_band(g, d.values) | (np.abs(g.radius - 1) <= 3 * g.h_radial) | d.tube
    rep = viscosity_residual(p, g, d.values, exclude=band)
    assert rep.interior_max <= 3 * g.h


def test_quadratic_expansion_near_source(fields):
    p, out, g, fs = fields("P2_spiral_source")
    d = fs[out["components"].index(_point(out))]
    z = np.array([[r * np.cos(t), r * np.sin(t)] for r in (0.05, 0.1, 0.2)
                  for t in np.linspace(0, 6, 13)])
    quad = 0.5 * np.sum(z**2, -1)
    assert np.max(np.abs(d(z) - quad)) <= np.max(np.linalg.norm(z, axis=-1) ** 3) + 3 * g.h


@pytest.mark.parametrize("name", ["P2_spiral_source", "P4_hopf_cycle"])
def test_local_bounds_hold(fields, name):
    p, out, g, fs = fields(name, 128)
    pt = _point(out)
    d = fs[out["components"].index(pt)]
    pair = build_test_functions(pt, 0.05, problem=p)
    rep = verify_local_bounds(p, pt, g, d.values, pair)
    assert rep.ok, rep.worst
