import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speclab import CATALOG_NAMES, catalog, hamiltonian, lagrangian, load_problem
from speclab.grid import make_grid
from speclab.problem import EllipticityError, problem_from_dict

finite = st.floats(-3, 3, allow_nan=False)
vec = st.tuples(finite, finite).map(np.array)


def test_catalog_examples():
    p0 = catalog("P0_constant")
    x = np.linspace(-0.9, 0.9, 11)
    assert np.all(p0.c(x, x) == 3)
    np.testing.assert_allclose(catalog("P2_spiral_source").drift(1.0, 0.0), [1.0, 1.0])
    p4 = catalog("P4_hopf_cycle")
    for phi in np.linspace(0, 2 * np.pi, 9):
        x = 2 * np.array([np.cos(phi), np.sin(phi)])
        assert p4.drift(*x) @ (x / 2) == pytest.approx(-6.0)


def test_hamiltonian_examples():
    p3 = catalog("P3_drift")
    assert hamiltonian(p3, [1.0, 0.0], [0.2, 0.3]) == pytest.approx(0.0)
    assert hamiltonian(p3, [0.0, 0.0], [0.2, 0.3]) == 0.0
    p2 = catalog("P2_spiral_source")
    assert hamiltonian(p2, [0.5, 0.0], [0.5, 0.0]) == pytest.approx(0.0, abs=1e-15)


def test_lagrangian_examples():
    flat = problem_from_dict({"name": "flat", "domain": {"kind": "disk", "R": 1},
                              "a": ["1", "0", "1"], "b": ["0", "0"], "c": "0"})
    assert lagrangian(flat, [2.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)


@pytest.mark.parametrize("name", CATALOG_NAMES)
@given(p=vec, v=vec, x=st.tuples(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7)))
def test_fenchel_inequality(name, p, v, x):
    prob = catalog(name)
    assert hamiltonian(prob, p, x) + lagrangian(prob, v, x) >= p @ v - 1e-10


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_moving_with_the_flow_is_free(name):
    prob = catalog(name)
    g = make_grid(prob.domain, 32)
    for x in g.points[::7]:
        assert abs(lagrangian(prob, -prob.drift(*x), x)) <= 1e-12


def test_load_problem_variants(tmp_path):
    assert load_problem("P3").name == "P3_drift"
    spec = {"name": "star", "domain": {"kind": "star", "R": "1 + 0.1*cos(2*phi)"},
            "a": ["1 + 0.1*x^2", "0.1", "1"], "b": ["-y", "x"], "c": "x"}
    p = load_problem(json.dumps(spec))
    assert p.name == "star"
    path = tmp_path / "p.json"
    path.write_text(json.dumps(spec))
    assert load_problem(str(path)).to_dict() == p.to_dict()
    with pytest.raises(KeyError):
        catalog("nope")


def test_ellipticity_is_enforced():
    bad = problem_from_dict({"name": "bad", "domain": {"kind": "disk", "R": 1},
                             "a": ["1", "2", "1"], "b": ["0", "0"], "c": "0"})
    with pytest.raises(EllipticityError):
        bad.check_ellipticity(np.zeros(3), np.zeros(3))
