import math

import numpy as np
import pytest
from scipy import special

from conftest import penetrable_sphere_amplitude, unit
from radpattern.background import BackgroundMedium, background_amplitude_Aq, scattering_solution_U0
from radpattern.homogenized import (
    CapacitanceDensityField,
    EffectiveField,
    EffectiveMediumSolver,
    amplitude_homogenized,
    born_amplitude,
    compare_discrete_continuum,
    gaussian_density,
    gaussian_fourier,
    sample_particles,
    solve_effective_field,
    truncated_gaussian_fourier,
)
from radpattern.quadrature import build_ball_grid, build_sphere_quadrature


def constant_sphere_interior(k, c, R, x, alpha, ell_max=40):
    """Interior field of (lap + k^2 - c) u = 0 in the ball, plane-wave incidence."""
    kap = math.sqrt(k * k - c)
    ells = np.arange(ell_max + 1)
    j, jp = special.spherical_jn(ells, k * R), special.spherical_jn(ells, k * R, True)
    y, yp = special.spherical_yn(ells, k * R), special.spherical_yn(ells, k * R, True)
    ji, jip = special.spherical_jn(ells, kap * R), special.spherical_jn(ells, kap * R, True)
    h, hp = j + 1j * y, jp + 1j * yp
    t = -(k * jp * ji - kap * j * jip) / (k * hp * ji - kap * h * jip)
    d = (j + t * h) / ji
    r = np.linalg.norm(x, axis=-1)
    cg = (x @ alpha) / np.where(r > 0, r, 1.0)
    return sum(
        1j**ell * (2 * ell + 1) * d[ell] * special.spherical_jn(ell, kap * r) * special.eval_legendre(ell, cg)
        for ell in ells
    )


def _rel_l2(grid, u, ref):
    return math.sqrt(grid.integrate(np.abs(u - ref) ** 2) / grid.integrate(np.abs(ref) ** 2))


def test_density_validation():
    g = build_ball_grid(1.0, 6)
    with pytest.raises(ValueError):
        CapacitanceDensityField(g, -np.ones(len(g)))
    with pytest.raises(ValueError):
        CapacitanceDensityField(g, np.ones(3))


def test_resolution_guard():
    m = BackgroundMedium.vacuum(10.0, 1.0)
    d = CapacitanceDensityField.from_function(lambda x: np.ones(len(x)), 1.0, 8)
    with pytest.raises(ValueError, match="resolve"):
        EffectiveMediumSolver(m, d)


@pytest.mark.parametrize("host", ["vacuum", "homogeneous"])
def test_zero_density_gives_background(host):
    m = BackgroundMedium.vacuum(1.0) if host == "vacuum" else BackgroundMedium(1.0, 1.3, 1.0)
    d = CapacitanceDensityField(build_ball_grid(1.0, 12), np.zeros(len(build_ball_grid(1.0, 12))))
    alpha = unit([0.0, 1.0, 1.0])
    f = solve_effective_field(m, d, alpha)
    np.testing.assert_array_equal(f.values, scattering_solution_U0(m, d.grid.points, alpha))
    q = build_sphere_quadrature(4)
    np.testing.assert_allclose(amplitude_homogenized(m, d, f, q.nodes), background_amplitude_Aq(m, q.nodes, alpha), rtol=1e-13)


def test_small_constant_density_born():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    alpha = unit([0.0, 0.0, 1.0])
    diffs, born_err = [], []
    for eps in (2e-2, 1e-2):
        d = CapacitanceDensityField.from_function(lambda x: np.full(len(x), eps), 1.0, 16)
        f = solve_effective_field(m, d, alpha)
        u0 = scattering_solution_U0(m, d.grid.points, alpha)
        solver = EffectiveMediumSolver(m, d)
        u1 = u0 - solver.op.apply(d.values * u0)  # first Born iterate
        diffs.append(np.abs(f.values - u0).max())
        born_err.append(np.abs(f.values - u1).max())
    np.testing.assert_allclose(diffs[0] / diffs[1], 2.0, rtol=0.05)  # O(eps)
    np.testing.assert_allclose(born_err[0] / born_err[1], 4.0, rtol=0.05)  # O(eps^2)


def test_constant_sphere_field_convergence():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    alpha = unit([0.0, 0.0, 1.0])
    errs = []
    for n in (16, 32):
        d = CapacitanceDensityField.from_function(lambda x: np.full(len(x), 0.5), 1.0, n)
        f = solve_effective_field(m, d, alpha)
        errs.append(_rel_l2(d.grid, f.values, constant_sphere_interior(1.0, 0.5, 1.0, d.grid.points, alpha)))
    assert errs[1] <= 1e-3
    assert errs[0] / errs[1] >= 2


def test_constant_sphere_amplitude():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    d = CapacitanceDensityField.from_function(lambda x: np.full(len(x), 0.5), 1.0, 24)
    q = build_sphere_quadrature(6)
    alpha = q.nodes[0]
    solver = EffectiveMediumSolver(m, d)
    A = solver.amplitude(solver.solve(alpha), q.nodes)
    # total potential c: interior wavenumber sqrt(k^2 - c)
    ref = penetrable_sphere_amplitude(1.0, math.sqrt(0.5), 1.0, q.nodes @ alpha)
    np.testing.assert_allclose(A, ref, rtol=1e-2)


def test_host_medium_plus_density_is_total_potential():
    # q from a homogeneous host plus a constant C on the same ball = one penetrable sphere
    k0 = 1.4
    c = 0.3
    m = BackgroundMedium(1.0, k0, 1.0)
    d = CapacitanceDensityField.from_function(lambda x: np.full(len(x), c), 1.0, 24)
    q = build_sphere_quadrature(6)
    alpha = q.nodes[3]
    solver = EffectiveMediumSolver(m, d)
    A = solver.amplitude(solver.solve(alpha), q.nodes)
    ref = penetrable_sphere_amplitude(1.0, math.sqrt(k0**2 - c), 1.0, q.nodes @ alpha)
    np.testing.assert_allclose(A, ref, rtol=1e-2)


def test_cut_cells_carry_host_potential():
    from radpattern.homogenized import cell_average_q

    m = BackgroundMedium(1.0, 1.5, 1.0)
    g = build_ball_grid(1.0, 12)
    q = cell_average_q(m, g, 1.0)
    # every cell of the grid ball lies inside the host ball, so q is constant
    np.testing.assert_allclose(q, 1.0 - 1.5**2, rtol=1e-14)
    g2 = build_ball_grid(1.5, 12)
    q2 = cell_average_q(m, g2, 1.5)
    np.testing.assert_allclose(g2.integrate(q2), (1.0 - 1.5**2) * 4 * math.pi / 3, rtol=2e-2)


def test_helmholtz_residual_is_second_order():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    alpha = unit([0.0, 0.0, 1.0])
    out = []
    for n in (16, 32):
        d = CapacitanceDensityField.from_function(gaussian_density(2.0, 0.25), 1.0, n)
        f = solve_effective_field(m, d, alpha)
        g = d.grid
        box = np.zeros(g.shape, complex)
        box[tuple(g.index.T)] = f.values
        cbox = np.zeros(g.shape)
        cbox[tuple(g.index.T)] = d.values
        c = box[1:-1, 1:-1, 1:-1]
        lap = (
            box[2:, 1:-1, 1:-1] + box[:-2, 1:-1, 1:-1] + box[1:-1, 2:, 1:-1]
            + box[1:-1, :-2, 1:-1] + box[1:-1, 1:-1, 2:] + box[1:-1, 1:-1, :-2] - 6 * c
        ) / g.h**2
        res = lap + (1.0 - cbox[1:-1, 1:-1, 1:-1]) * c
        axis = g.origin[0] + g.h * np.arange(1, n - 1)
        X = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1)
        inner = np.linalg.norm(X, axis=-1) < 0.8
        rel = np.sqrt(np.mean(np.abs(res[inner]) ** 2) / np.mean(np.abs(c[inner]) ** 2))
        out.append((g.h, rel))
    for h, rel in out:
        assert rel <= 2 * h**2
    assert out[0][1] / out[1][1] >= 3.5


def test_born_gaussian_amplitude():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    q = build_sphere_quadrature(6)
    alpha = q.nodes[0]
    d = CapacitanceDensityField.from_function(gaussian_density(1e-3, 0.25), 1.0, 24)
    solver = EffectiveMediumSolver(m, d)
    A = solver.amplitude(solver.solve(alpha), q.nodes)
    ref = -truncated_gaussian_fourier(1e-3, 0.25, 1.0, q.nodes - alpha) / (4 * math.pi)
    np.testing.assert_allclose(A, ref, rtol=5e-3)
    # born_amplitude drops the O(eps^2) multiple scattering
    np.testing.assert_allclose(born_amplitude(m, d, q.nodes, alpha), ref, rtol=5e-3)


def test_gaussian_transforms():
    xi = np.array([[0.0, 0.0, 0.0], [0.3, -0.4, 1.2]])
    # a wide ball recovers the untruncated transform
    np.testing.assert_allclose(truncated_gaussian_fourier(2.0, 0.2, 3.0, xi), gaussian_fourier(2.0, 0.2, xi), rtol=1e-12)
    g = build_ball_grid(1.0, 40)
    vals = gaussian_density(2.0, 0.3)(g.points)
    direct = np.exp(-1j * xi @ g.points.T) @ (vals * g.weights)
    np.testing.assert_allclose(truncated_gaussian_fourier(2.0, 0.3, 1.0, xi), direct, rtol=2e-3)


def test_optical_theorem_and_reciprocity():
    m = BackgroundMedium(1.0, 1.2, 1.0)
    d = CapacitanceDensityField.from_function(gaussian_density(0.8, 0.3, (0.1, -0.2, 0.0)), 1.0, 32)
    q = build_sphere_quadrature(20)
    solver = EffectiveMediumSolver(m, d)
    a = unit([0.2, 0.5, -0.3])
    A = solver.amplitude(solver.solve(a), np.vstack([q.nodes, a]))
    lhs = A[-1].imag
    rhs = m.k / (4 * math.pi) * q.integrate(np.abs(A[:-1]) ** 2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-3)
    b = unit([-0.6, 0.1, 0.4])
    A_ab = solver.amplitude(solver.solve(b), a)
    A_ba = solver.amplitude(solver.solve(-a), -b)
    np.testing.assert_allclose(A_ab, A_ba, rtol=1e-3)


def test_sampling_hard_core_and_reproducibility():
    d = CapacitanceDensityField.from_function(gaussian_density(1.0, 0.3), 1.0, 16)
    p1 = sample_particles(d, 400, np.random.default_rng(7))
    p2 = sample_particles(d, 400, np.random.default_rng(7))
    np.testing.assert_array_equal(p1.positions, p2.positions)
    a = p1.radii[0]
    assert p1.min_distance() >= 10 * a
    np.testing.assert_allclose(p1.capacitances.sum(), d.total, rtol=1e-12)
    assert np.all(np.linalg.norm(p1.positions, axis=-1) <= 1.0)


def test_compare_zero():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    g = build_ball_grid(1.0, 8)
    d = CapacitanceDensityField(g, np.zeros(len(g)))
    q = build_sphere_quadrature(2)
    st = compare_discrete_continuum(m, d, 0, 2, 0, q.nodes, q.nodes)
    np.testing.assert_array_equal(st.per_trial, 0.0)


def test_compare_single_narrow_bump():
    m = BackgroundMedium.vacuum(1.0, 1.0)
    # self-interaction ~ mass / (4 pi width) and phase spread ~ k width both stay small
    width = 0.01
    eps = 1e-3 / ((2 * math.pi) ** 1.5 * width**3)
    d = CapacitanceDensityField.from_function(gaussian_density(eps, width), 5 * width, 32)
    q = build_sphere_quadrature(4)
    st = compare_discrete_continuum(m, d, 1, 1, 3, q.nodes, q.nodes[:4])
    assert st.per_trial[0] <= 0.05
