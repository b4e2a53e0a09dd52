import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit
from radpattern.background import BackgroundMedium, background_amplitude_Aq, free_green, scattering_solution_U0
from radpattern.manybody import (
    ChargeSolver,
    ConditioningError,
    ParticleSet,
    RegimeError,
    amplitude_discrete,
    amplitude_table_discrete,
    effective_field,
    interaction_matrix,
    jacobi_charges,
    regime_check,
    solve_charges,
    sphere_capacitance,
)
from radpattern.quadrature import build_sphere_quadrature


def test_sphere_capacitance():
    np.testing.assert_allclose(sphere_capacitance(0.01), 0.12566371, atol=5e-9)
    np.testing.assert_allclose(sphere_capacitance(1.0), 4 * math.pi, rtol=1e-15)
    np.testing.assert_allclose(sphere_capacitance(0.02), 2 * sphere_capacitance(0.01), rtol=1e-15)
    with pytest.raises(ValueError):
        sphere_capacitance(0.0)


def test_particle_set_validation():
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((2, 3)), [0.1], [1.0])
    with pytest.raises(ValueError):
        ParticleSet.spheres([[0, 0, 0]], [-0.1])
    assert len(ParticleSet.empty()) == 0


def test_single_particle_charge():
    m = BackgroundMedium.vacuum(1.0)
    a = 0.01
    t = np.array([0.3, -0.2, 0.5])
    alpha = unit([1.0, 1.0, 0.0])
    sol = solve_charges(m, ParticleSet.spheres([t], a), alpha)
    np.testing.assert_allclose(sol.charges, [-4 * math.pi * a * np.exp(1j * alpha @ t)], rtol=1e-14)


def test_symmetric_pair_closed_form():
    m = BackgroundMedium.vacuum(1.0)
    a = 0.01
    t1, t2 = np.array([0.0, 0.0, -0.25]), np.array([0.0, 0.0, 0.25])
    alpha = unit([1.0, 0.0, 0.0])  # perpendicular to t2 - t1
    C = sphere_capacitance(a)
    sol = solve_charges(m, ParticleSet.spheres([t1, t2], a), alpha)
    g = np.exp(1j * 0.5) / (4 * math.pi * 0.5)
    Q = -C * np.exp(1j * alpha @ t1) / (1 + C * g)
    np.testing.assert_allclose(sol.charges, [Q, Q], rtol=1e-10)


def test_decoupled_limit():
    m = BackgroundMedium.vacuum(1.0)
    pos = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]], float)
    for c in (1e-2, 1e-6, 1e-10):
        ps = ParticleSet(pos, np.full(3, 1e-12), np.full(3, c))
        Q = solve_charges(m, ps, [0, 0, 1.0], check_regime=False).charges
        assert np.abs(Q).max() <= 1.01 * c


def test_single_particle_amplitude_on_grid():
    m = BackgroundMedium.vacuum(1.0)
    a = 0.01
    t = np.array([0.2, 0.1, -0.3])
    q = build_sphere_quadrature(20)
    tab = amplitude_table_discrete(m, ParticleSet.spheres([t], a), q.nodes, q.nodes)
    ref = -a * np.exp(1j * (q.nodes[None, :, :] - q.nodes[:, None, :]) @ t)
    np.testing.assert_allclose(tab, ref, atol=1e-10 * a, rtol=0)


def test_single_particle_at_origin_constant():
    m = BackgroundMedium.vacuum(1.0)
    ps = ParticleSet.spheres([[0, 0, 0]], 0.01)
    sol = solve_charges(m, ps, [0, 0, 1.0])
    q = build_sphere_quadrature(6)
    np.testing.assert_allclose(amplitude_discrete(m, ps, sol, q.nodes), -0.01, rtol=1e-14)


def test_empty_set_gives_Aq():
    m = BackgroundMedium(1.0, 1.3, 1.0)
    q = build_sphere_quadrature(6)
    tab = amplitude_table_discrete(m, ParticleSet.empty(), q.nodes, q.nodes[:3])
    for j in range(3):
        np.testing.assert_allclose(tab[:, j], background_amplitude_Aq(m, q.nodes, q.nodes[j]), rtol=1e-14)


@pytest.mark.parametrize("host", ["vacuum", "radial"])
def test_reciprocity(host, rng):
    if host == "vacuum":
        m = BackgroundMedium.vacuum(1.0, 1.0)
    else:
        m = BackgroundMedium(1.0, 1.3, 1.0, "radial", k0_profile=lambda r: 1.4 - 0.2 * r)
    pos = rng.uniform(-0.7, 0.7, size=(12, 3))
    ps = ParticleSet.spheres(pos, 0.002)
    dirs = unit(rng.normal(size=(6, 3)))
    A = amplitude_table_discrete(m, ps, dirs, -dirs)  # A[i, j] = A(d_i, -d_j)
    # A(alpha', alpha) = A(-alpha, -alpha'): A[i, j] = A(d_i, -d_j) = A(d_j, -d_i) = A[j, i]
    np.testing.assert_allclose(A, A.T, rtol=1e-10, atol=1e-14)


def test_residual_contract(rng):
    m = BackgroundMedium.vacuum(2.0)
    ps = ParticleSet.spheres(rng.uniform(-1, 1, size=(40, 3)), 0.001)
    sol = solve_charges(m, ps, [0.0, 1.0, 0.0], check_regime=False)
    assert sol.residual <= 1e-10


def test_jacobi_matches_direct(rng):
    m = BackgroundMedium.vacuum(1.0)
    ps = ParticleSet.spheres(rng.uniform(-1, 1, size=(30, 3)), 0.002)
    alpha = unit([1.0, 0.0, 1.0])
    Q, _ = jacobi_charges(m, ps, alpha)
    np.testing.assert_allclose(Q, solve_charges(m, ps, alpha, check_regime=False).charges, rtol=1e-10)


def test_conditioning_error_names_pair():
    m = BackgroundMedium.vacuum(1.0)
    # capacitances tuned so that 1 + C g(d) vanishes: singular 2x2 system
    d = 0.5
    g = np.exp(1j * d) / (4 * math.pi * d)
    C = 1.0 / abs(g)
    pos = np.array([[0, 0, 0], [d, 0, 0]], float)
    ps = ParticleSet(pos, [1e-3, 1e-3], [C, C])
    # choose k so that g is real and negative: e^{ikd} = -1
    m = BackgroundMedium.vacuum(math.pi / d)
    with pytest.raises(ConditioningError, match="particles 0 and 1|particles 1 and 0"):
        ChargeSolver(m, ps)


def test_regime_examples():
    m = BackgroundMedium(1.0, 1.2, 1.0)
    ps = ParticleSet.spheres([[0, 0, 0], [0.5, 0, 0]], 0.01)
    rep = regime_check(m, ps)
    np.testing.assert_allclose(rep.k0a, 0.012)
    np.testing.assert_allclose(rep.d_over_a, 50.0)
    assert rep.valid
    assert not regime_check(m, ParticleSet.spheres([[0, 0, 0], [5, 0, 0]], 0.5)).valid
    one = regime_check(m, ParticleSet.spheres([[0, 0, 0]], 0.01))
    assert one.d_over_a == math.inf and one.distance_ok


def test_regime_violation_raises():
    m = BackgroundMedium.vacuum(1.0)
    ps = ParticleSet.spheres([[0, 0, 0], [0.05, 0, 0]], 0.01)
    with pytest.raises(RegimeError):
        solve_charges(m, ps, [0, 0, 1.0])


def test_effective_field_empty_and_self_exclusion():
    m = BackgroundMedium(1.0, 1.2, 1.0)
    alpha = unit([0, 0, 1.0])
    x = np.array([[0.1, 0.2, 0.3], [0.5, -0.5, 0.0]])
    sol = solve_charges(m, ParticleSet.empty(), alpha)
    np.testing.assert_allclose(effective_field(m, ParticleSet.empty(), sol, x), scattering_solution_U0(m, x, alpha))
    ps = ParticleSet.spheres([[0.1, 0.2, 0.3]], 0.01)
    sol = solve_charges(m, ps, alpha)
    xn = np.array([0.1, 0.2, 0.3 + 0.015])
    np.testing.assert_allclose(effective_field(m, ps, sol, xn), scattering_solution_U0(m, xn, alpha), rtol=1e-14)


@pytest.mark.parametrize("host", ["vacuum", "homogeneous"])
def test_effective_field_far_field(host, rng):
    m = BackgroundMedium.vacuum(1.0) if host == "vacuum" else BackgroundMedium(1.0, 1.2, 1.0)
    ps = ParticleSet.spheres(rng.uniform(-0.6, 0.6, size=(5, 3)), 0.005)
    alpha = unit([0.0, 0.3, 1.0])
    sol = solve_charges(m, ps, alpha)
    xhat = unit([0.4, -0.7, 0.2])
    r = 1e4
    u = effective_field(m, ps, sol, r * xhat)
    lhs = r * np.exp(-1j * r) * (u - scattering_solution_U0(m, r * xhat, alpha))
    rhs = np.sum(scattering_solution_U0(m, ps.positions, -xhat) * sol.charges) / (4 * math.pi)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-3)


def test_interaction_matrix_symmetric(rng):
    pos = rng.uniform(-1, 1, size=(8, 3))
    G = interaction_matrix(BackgroundMedium.vacuum(1.5), pos)
    np.testing.assert_allclose(G, G.T)
    assert np.all(np.diag(G) == 0)
    np.testing.assert_allclose(G[0, 1], free_green(1.5, pos[0], pos[1]))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_charge_equations_hold(n, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1, 1, size=(n, 3))
    ps = ParticleSet(pos, np.full(n, 1e-4), rng.uniform(1e-3, 1e-1, size=n))
    alpha = unit(rng.normal(size=3))
    m = BackgroundMedium.vacuum(1.0)
    Q = solve_charges(m, ps, alpha, check_regime=False).charges
    G = interaction_matrix(m, pos)
    lhs = Q + ps.capacitances * (G @ Q)
    np.testing.assert_allclose(lhs, -ps.capacitances * np.exp(1j * pos @ alpha), rtol=1e-10, atol=1e-14)
