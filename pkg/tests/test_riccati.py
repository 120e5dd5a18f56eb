import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speclab import catalog
from speclab.flow import Kind
from speclab.riccati import (RiccatiError, build_test_functions, care_maximal, lyapunov_integral,
                             lyapunov_solve, maximality_gap, periodic_riccati_maximal,
                             random_hyperbolic_pair, riccati_for, trace_identity_check)
from speclab.problem import hamiltonian

J = np.array([[0.0, -1.0], [1.0, 0.0]])


@pytest.mark.parametrize("B, Q, G", [
    (-np.eye(2), np.eye(2), np.zeros((2, 2))),
    (np.diag([2.0, -2.0]), np.eye(2), np.diag([1.0, 0.0])),
    (np.eye(2) + J, np.eye(2), 0.5 * np.eye(2)),
])
def test_closed_form_solutions(B, Q, G):
    sol = care_maximal(B, Q)
    np.testing.assert_allclose(sol.Gamma, G, atol=1e-12)
    assert sol.ok


def test_stable_drift_lyapunov_companion():
    # M = 4 Q Gamma - B = I, so D M + M^T D = 2I forces D = I
    sol = care_maximal(-np.eye(2), np.eye(2))
    np.testing.assert_allclose(sol.D, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("M, D", [
    (2 * np.eye(2), 0.5 * np.eye(2)),
    (np.diag([1.0, 3.0]), np.diag([1.0, 1 / 3])),
])
def test_lyapunov_examples(M, D):
    np.testing.assert_allclose(lyapunov_solve(M), D, atol=1e-14)
    np.testing.assert_allclose(lyapunov_integral(M, 2 * np.eye(2)), D, atol=1e-12)


def test_rejects_non_hyperbolic_or_indefinite_input():
    with pytest.raises(RiccatiError):
        care_maximal(J, np.eye(2))
    with pytest.raises(RiccatiError):
        care_maximal(np.eye(2), -np.eye(2))


@settings(max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([2, 3]))
def test_random_certificates(seed, n):
    B, Q = random_hyperbolic_pair(np.random.default_rng(seed), n)
    sol = care_maximal(B, Q)
    assert sol.residual <= 1e-10
    assert sol.antistability_margin > 0
    assert sol.symmetry_error <= 1e-12
    assert sol.min_eig_gamma >= -1e-10
    assert sol.lyapunov_residual <= 1e-10
    assert np.linalg.eigvalsh(sol.D).min() > 0
    assert trace_identity_check(sol).diff <= 1e-8
    assert maximality_gap(B, Q, sol.Gamma) >= -1e-9


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([2, 3]))
def test_lyapunov_direct_matches_integral(seed, n):
    rng = np.random.default_rng(seed)
    while True:
        M = rng.normal(size=(n, n))
        if np.linalg.eigvals(M).real.min() > 0.1:
            break
    C = 2 * np.eye(n)
    np.testing.assert_allclose(lyapunov_solve(M, C), lyapunov_integral(M, C), atol=1e-8)


def test_constant_cycle_data_reduces_to_algebraic(flows):
    # the transverse data of the P4 family are constant along r = 1
    p, out = flows("P4_hopf_cycle")
    (cyc,) = [c for c in out["components"] if c.kind is Kind.INTERIOR_CYCLE]
    sol = periodic_riccati_maximal(cyc, p)
    alg = care_maximal(sol.B[0], sol.Q[0])
    np.testing.assert_allclose(sol.Gamma, np.broadcast_to(alg.Gamma, sol.Gamma.shape), atol=1e-8)
    np.testing.assert_allclose(sol.Gamma, 0.0, atol=1e-8)
    assert sol.ok


def test_repelling_cycle_trace(flows):
    p, out = flows("P4r_reversed_hopf")
    (cyc,) = [c for c in out["components"] if c.kind is Kind.INTERIOR_CYCLE]
    sol = periodic_riccati_maximal(cyc, p)
    np.testing.assert_allclose(sol.Gamma, 1.0, atol=1e-6)
    tr = trace_identity_check(sol, cyc)
    assert tr.lhs == pytest.approx(4 * np.pi, abs=1e-3)
    assert tr.rhs == pytest.approx(4 * np.pi, abs=1e-3)
    assert sol.ok


@pytest.mark.parametrize("name, expected", [("P2_spiral_source", 2.0), ("P1_attractor", 0.0)])
def test_fixed_point_trace_identity(flows, name, expected):
    p, out = flows(name)
    pt = next(c for c in out["components"] if c.kind is Kind.INTERIOR_POINT)
    sol = riccati_for(pt, p)
    tr = trace_identity_check(sol, pt)
    assert tr.ok and tr.lhs == pytest.approx(expected, abs=1e-8)
    assert -tr.lhs + float(p.c(*pt.location)) == pytest.approx(2.0, abs=1e-8)


def test_barriers_around_spiral_source(flows):
    p, out = flows("P2_spiral_source")
    pt = next(c for c in out["components"] if c.kind is Kind.INTERIOR_POINT)
    pair = build_test_functions(pt, 0.05, problem=p)
    assert pair.delta == 0.05
    np.testing.assert_allclose(pair.minus.solution.D, np.eye(2), atol=1e-12)
    z = 0.1 * np.array([[np.cos(t), np.sin(t)] for t in np.linspace(0, 6, 25)])
    np.testing.assert_allclose(pair.minus(z), 0.45 * np.sum(z**2, -1), atol=1e-12)
    np.testing.assert_allclose(pair.plus(z), 0.55 * np.sum(z**2, -1), atol=1e-12)
    assert pair.minus(np.zeros((1, 2)))[0] == 0 and pair.plus(np.zeros((1, 2)))[0] == 0
    # sub- and supersolution signs at the quadratic level
    for x in z:
        r2 = x @ x
        assert hamiltonian(p, pair.minus.gradient(x[None])[0], x) <= -0.025 * r2 + 1e-9
        assert hamiltonian(p, pair.plus.gradient(x[None])[0], x) >= 0.025 * r2 - 1e-9


@pytest.mark.parametrize("delta", [0.2, 0.1, 0.05, 0.02])
def test_barrier_gap_scales_with_delta(flows, delta):
    p, out = flows("P2_spiral_source")
    pt = next(c for c in out["components"] if c.kind is Kind.INTERIOR_POINT)
    pair = build_test_functions(pt, delta, problem=p, auto_halve=False)
    z = np.array([[0.05, 0.02], [-0.03, 0.07]])
    gap = pair.plus(z) - pair.minus(z)
    np.testing.assert_allclose(gap, 2 * delta * np.sum(z**2, -1), rtol=1e-10)


def test_boundary_point_barriers(flows):
    p, out = flows("P3_drift")
    bp = next(c for c in out["components"] if c.kind is Kind.BOUNDARY_POINT)
    sol = riccati_for(bp, p)
    assert sol.ok and trace_identity_check(sol, bp).ok
    pair = build_test_functions(bp, 0.05, problem=p)
    assert pair.checks["order_ok"]


def test_cycle_barriers(flows):
    p, out = flows("P4r_reversed_hopf")
    (cyc,) = [c for c in out["components"] if c.kind is Kind.INTERIOR_CYCLE]
    pair = build_test_functions(cyc, 0.05, problem=p)
    assert pair.checks["sub_ok"] and pair.checks["super_ok"] and pair.checks["order_ok"]
