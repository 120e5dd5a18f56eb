import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speclab import catalog
from speclab.eigen import (assemble, extrapolate_linear, gradient_bound_diagnostic,
                           penalized_eigenpair, principal_eigenpair, solve)
from speclab.grid import make_grid


@pytest.fixture(scope="module")
def p0_grid():
    p = catalog("P0_constant")
    return p, make_grid(p.domain, 64)


@pytest.mark.parametrize("scheme", ["fitted", "upwind"])
def test_constant_vector_row_sums(p0_grid, scheme):
    p, g = p0_grid
    op = assemble(p, 0.05, g, scheme)
    np.testing.assert_allclose(op.apply(np.ones(g.shape)), 3.0, atol=1e-10)


@pytest.mark.parametrize("scheme", ["fitted", "upwind"])
def test_shifted_operator_is_m_matrix(p0_grid, scheme):
    p, g = p0_grid
    op = assemble(p, 0.05, g, scheme)
    M = (4.0 * np.eye(g.size) - op.matrix.toarray())
    off = M - np.diag(np.diag(M))
    assert off.max() <= 0.0


def test_constant_c_is_explicit(p0_grid):
    p, g = p0_grid
    pair = solve(p, 0.05, g)
    assert abs(pair.lam - 3.0) <= 1e-10
    assert np.max(np.abs(pair.u - 1.0)) <= 1e-10


@pytest.mark.parametrize("name", ["P1_attractor", "P2_spiral_source", "P3_drift",
                                  "P4_hopf_cycle", "P4r_reversed_hopf"])
def test_normalization_and_sandwich(name):
    p = catalog(name)
    g = make_grid(p.domain, 32)
    pair = solve(p, 0.04, g)
    c = p.c_value(g.x, g.y) * np.ones(g.shape)
    assert c.min() - 1e-8 <= pair.lam <= c.max() + 1e-8
    assert np.all(pair.u > 0) and pair.u.max() == pytest.approx(1.0, abs=1e-14)
    assert abs(pair.W.min()) <= 1e-12
    assert pair.residual <= 1e-8 * (1 + abs(pair.lam))


@settings(max_examples=15)
@given(k=st.floats(-3, 3), eps=st.sampled_from([0.08, 0.04]))
def test_constant_shift_of_c_shifts_lambda(k, eps):
    p = catalog("P1_attractor")
    g = make_grid(p.domain, 32)
    base = solve(p, eps, g).lam
    shifted = solve(p.with_c(f"2 - (x^2 + y^2) + {k!r}"), eps, g).lam
    assert shifted - base == pytest.approx(k, abs=1e-9)


def test_attractor_eigenvalue_approaches_c_at_the_point():
    p = catalog("P1_attractor")
    g = make_grid(p.domain, 64)
    lams = [solve(p, e, g).lam for e in (0.08, 0.04, 0.02)]
    assert all(1 <= l <= 2 for l in lams)
    assert lams[0] < lams[1] < lams[2]


def test_penalty_with_zero_kappa_is_identity():
    p = catalog("P4_hopf_cycle")
    g = make_grid(p.domain, 32)
    base = solve(p, 0.04, g)
    pen = penalized_eigenpair(p, 0.04, g, np.zeros((1, 2)), kappa=0.0)
    assert pen.lam == pytest.approx(base.lam, abs=1e-12)


def test_penalty_lowers_the_eigenvalue():
    p = catalog("P4_hopf_cycle")
    g = make_grid(p.domain, 64)
    base = solve(p, 0.04, g)
    ring = np.stack([np.cos(np.linspace(0, 6.28, 50)), np.sin(np.linspace(0, 6.28, 50))], -1)
    pen = penalized_eigenpair(p, 0.04, g, np.zeros((1, 2)), other_points=[ring])
    assert pen.lam <= base.lam + 1e-8


def test_extrapolation_is_exact_on_linear_data():
    eps = [0.08, 0.04, 0.02, 0.01]
    l0, slope = extrapolate_linear(eps, [2 + 3 * e for e in eps])
    assert l0 == pytest.approx(2.0, abs=1e-12) and slope == pytest.approx(3.0, abs=1e-10)


def test_gradient_bound_diagnostic_reports_each_eps():
    p = catalog("P2_spiral_source")
    g = make_grid(p.domain, 32)
    out = gradient_bound_diagnostic([solve(p, e, g) for e in (0.08, 0.04)])
    assert out["eps"] == [0.08, 0.04] and len(out["max_grad"]) == 2


def test_principal_pair_from_operator_matches_solve():
    p = catalog("P3_drift")
    g = make_grid(p.domain, 32)
    assert principal_eigenpair(assemble(p, 0.04, g)).lam == solve(p, 0.04, g).lam
