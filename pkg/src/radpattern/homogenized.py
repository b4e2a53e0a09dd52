"""Effective-medium limit: the volume integral equation for u_e.

``u_e = U0 - int G(x, y) C(y) u_e(y) dy`` is equivalent to scattering by the
total potential ``q + C``.  It is discretized on a Cartesian ball grid as a
Nystrom system with the free kernel (the host potential, if any, is moved
into the grid potential), and solved with restarted GMRES.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .background import (
    BackgroundMedium,
    U0_moments,
    background_amplitude_Aq,
    potential_q,
    scattering_solution_U0,
)
from .manybody import ParticleSet, amplitude_table_discrete
from .quadrature import VolumeGrid, build_ball_grid
from .sampling import PackingError, hardcore_positions
from .volume import VolumePotential, solve_lippmann_schwinger, spectral_radius_estimate

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CapacitanceDensityField:
    grid: VolumeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValueError("density values must match the grid")
        if np.any(v < 0):
            raise ValueError("capacitance density must be nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, func, radius, n):
        grid = build_ball_grid(radius, n)
        vals = np.asarray(func(grid.points), dtype=float)
        return cls(grid, np.broadcast_to(vals, (len(grid),)).copy())

    @property
    def total(self):
        """int C dy."""
        return float(self.grid.integrate(self.values))

    @property
    def radius(self):
        return float(-self.grid.origin[0] + 0.5 * self.grid.h)


@dataclass(frozen=True)
class EffectiveField:
    values: np.ndarray
    alpha: np.ndarray
    residual: float
    iterations: int = 0


def gaussian_density(eps, width, center=(0.0, 0.0, 0.0)):
    """``x -> eps exp(-|x - c|^2 / (2 width^2))``."""
    c = np.asarray(center, dtype=float)

    def f(x):
        return eps * np.exp(-np.sum((np.asarray(x) - c) ** 2, axis=-1) / (2 * width**2))

    return f


def gaussian_fourier(eps, width, xi, center=(0.0, 0.0, 0.0)):
    """Untruncated transform ``int C(x) e^{-i xi.x} dx`` of :func:`gaussian_density`.

    ``xi`` may be complex (entire function).
    """
    xi = np.asarray(xi)
    c = np.asarray(center, dtype=float)
    s2 = np.sum(xi * xi, axis=-1)
    return eps * (2 * math.pi) ** 1.5 * width**3 * np.exp(-0.5 * width**2 * s2 - 1j * (xi @ c))


def cell_average_q(medium: BackgroundMedium, grid: VolumeGrid, radius, n_sub=8, chunk=2048):
    """Host potential averaged over each cell's part inside the grid ball.

    Point values at cell centres would drop the host from cut cells whose
    centre lies outside ``b0``; that O(h) error dominates the amplitude.
    """
    q = potential_q(medium, grid.points)
    if medium.is_vacuum:
        return q
    h = grid.h
    half_diag = h * math.sqrt(3) / 2
    r = np.linalg.norm(grid.points, axis=-1)
    edges = np.concatenate([medium.layer_radii, [radius]])
    cut = np.any(np.abs(r[:, None] - edges[None]) < half_diag, axis=1)
    if not np.any(cut):
        return q
    offs = ((np.arange(n_sub) + 0.5) / n_sub - 0.5) * h
    sub = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), -1).reshape(-1, 3)
    idx = np.flatnonzero(cut)
    q = q.copy()
    for start in range(0, idx.size, chunk):
        cells = idx[start : start + chunk]
        pts = grid.points[cells][:, None, :] + sub[None]
        inside = np.einsum("ijk,ijk->ij", pts, pts) <= radius * radius
        qs = potential_q(medium, pts.reshape(-1, 3)).reshape(inside.shape)
        cnt = inside.sum(axis=1)
        q[cells] = np.where(cnt > 0, (qs * inside).sum(axis=1) / np.maximum(cnt, 1), q[cells])
    return q


class EffectiveMediumSolver:
    """Reusable discretization for one medium and density."""

    def __init__(self, medium: BackgroundMedium, density: CapacitanceDensityField, check_resolution=True):
        self.medium = medium
        self.density = density
        grid = density.grid
        kmax = max(medium.k, float(np.max(medium.layer_wavenumbers)))
        if check_resolution and grid.h > 2 * math.pi / (10 * kmax) + 1e-12:
            raise ValueError(f"grid spacing {grid.h:.3g} does not resolve the wavelength (need <= {2 * math.pi / (10 * kmax):.3g})")
        if not medium.is_vacuum and density.radius < medium.b0 - 1e-12:
            raise ValueError("density grid must cover the host ball")
        self.op = VolumePotential(grid, medium.k)
        self.q = cell_average_q(medium, grid, density.radius)
        self.v = self.q + density.values

    def solve(self, alpha, tol=1e-8, maxiter=500) -> EffectiveField:
        alpha = np.asarray(alpha, dtype=float)
        alpha = alpha / np.linalg.norm(alpha)
        grid = self.density.grid
        if not np.any(self.density.values):
            u0 = scattering_solution_U0(self.medium, grid.points, alpha)
            return EffectiveField(np.asarray(u0, dtype=complex), alpha, 0.0, 0)
        rhs = np.exp(1j * self.medium.k * (grid.points @ alpha))
        try:
            u, res, it = solve_lippmann_schwinger(self.op, self.v, rhs, tol=tol, maxiter=maxiter)
        except RuntimeError as exc:
            rho = spectral_radius_estimate(self.op, self.v)
            raise DivergenceError(f"{exc}; spectral radius of the integral operator ~ {rho:.3g}", rho) from exc
        return EffectiveField(u, alpha, res, it)

    def amplitude(self, field: EffectiveField, alpha_out):
        """A(alpha', alpha) = A_q - (1/4pi) int U0(y, -alpha') C(y) u_e(y) dy."""
        ao = np.atleast_2d(np.asarray(alpha_out, dtype=float))
        ao = ao / np.linalg.norm(ao, axis=-1, keepdims=True)
        grid = self.density.grid
        cw = self.density.values * grid.weights * field.values
        A = background_amplitude_Aq(self.medium, ao, field.alpha) - U0_moments(self.medium, grid.points, cw, -ao) / (4 * math.pi)
        return A[0] if np.ndim(alpha_out) == 1 else A

    def amplitude_table(self, alpha_out, alpha_in, tol=1e-8):
        AI = np.atleast_2d(alpha_in)
        cols = [self.amplitude(self.solve(a, tol=tol), alpha_out) for a in AI]
        return np.stack(cols, axis=-1)


def solve_effective_field(medium, density, alpha, tol=1e-8) -> EffectiveField:
    return EffectiveMediumSolver(medium, density).solve(alpha, tol=tol)


def amplitude_homogenized(medium, density, field: EffectiveField, alpha_out):
    return EffectiveMediumSolver(medium, density, check_resolution=False).amplitude(field, alpha_out)


def born_amplitude(medium, density, alpha_out, alpha_in):
    """First Born term of the homogenized amplitude (u_e replaced by U0)."""
    solver = EffectiveMediumSolver(medium, density, check_resolution=False)
    grid = density.grid
    u0 = scattering_solution_U0(medium, grid.points, alpha_in)
    return solver.amplitude(EffectiveField(np.asarray(u0, complex), np.asarray(alpha_in, float), 0.0), alpha_out)


def sample_particles(density: CapacitanceDensityField, M: int, rng, hard_core_factor=10.0, max_retries=10_000):
    """Draw M equal-capacitance spheres with positions distributed like C.

    Capacitances are ``int C / M`` each (radius ``C_m / 4pi``); a hard-core
    distance of ``hard_core_factor * a`` is enforced by redrawing.
    """
    if M == 0:
        return ParticleSet.empty()
    total = density.total
    if total <= 0:
        raise SamplingError("density has zero mass")
    cap = total / M
    a = cap / (4 * math.pi)
    try:
        pts = hardcore_positions(
            density.grid, density.values, M, hard_core_factor * a, rng, radius=density.radius, max_retries=max_retries
        )
    except PackingError as exc:
        raise SamplingError(f"{exc} (max feasible ~ {exc.max_feasible})") from exc
    return ParticleSet(pts, np.full(M, a), np.full(M, cap))


@dataclass(frozen=True)
class DiscrepancyStats:
    M: int
    per_trial: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.per_trial)) if len(self.per_trial) else 0.0

    @property
    def max(self):
        return float(np.max(self.per_trial)) if len(self.per_trial) else 0.0


def compare_discrete_continuum(medium, density, M, trials, seed, alpha_out, alpha_in, reference=None):
    """Amplitude discrepancy between sampled M-particle clouds and the continuum.

    Returns relative L2 discrepancies over the direction-pair grid, one per
    trial.  ``reference`` may pass a precomputed homogenized table.
    """
    if reference is None:
        if density.total == 0:
            reference = np.stack([background_amplitude_Aq(medium, alpha_out, a) for a in np.atleast_2d(alpha_in)], -1)
        else:
            reference = EffectiveMediumSolver(medium, density).amplitude_table(alpha_out, alpha_in)
    rng = np.random.default_rng(seed)
    out = []
    scale = max(np.linalg.norm(reference), 1e-300)
    for _ in range(trials):
        if M == 0:
            table = np.stack([background_amplitude_Aq(medium, alpha_out, a) for a in np.atleast_2d(alpha_in)], -1)
        else:
            ps = sample_particles(density, M, rng)
            table = amplitude_table_discrete(medium, ps, alpha_out, alpha_in, check_regime=False)
        diff = np.linalg.norm(table - reference)
        out.append(diff / scale if np.linalg.norm(reference) > 0 else diff)
    return DiscrepancyStats(M, np.asarray(out))


def truncated_gaussian_fourier(eps, width, radius, xi, n_quad=200):
    """Transform of the Gaussian density restricted to the ball of ``radius``.

    Reduces to a radial integral with kernel ``sin(|xi| r) / (|xi| r)``;
    ``xi`` may be complex, with |xi| the principal root of ``xi . xi``.
    """
    xi = np.asarray(xi)
    t, w = np.polynomial.legendre.leggauss(n_quad)
    r = 0.5 * radius * (t + 1)
    w = 0.5 * radius * w
    s = np.sqrt(np.sum(xi * xi, axis=-1) + 0j)[..., None]
    kern = np.sinc(s * r / math.pi)
    radial = 4 * math.pi * r**2 * np.exp(-(r**2) / (2 * width**2)) * w
    out = eps * np.sum(kern * radial, axis=-1)
    return out.real if not np.iscomplexobj(xi) and np.all(np.isreal(out)) else out
