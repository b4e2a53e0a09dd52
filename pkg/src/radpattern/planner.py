"""Turn a capacitance density into a concrete placement of identical spheres.

Particle number density is ``N = C / cap`` with ``cap = 4 pi a``.  Positions
are drawn sequentially with a hard-core distance (default 10 a); since the
hard core thins dense regions slightly, the expected count is drawn first
and then filled, which corrects the induced intensity bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .background import BackgroundMedium
from .homogenized import CapacitanceDensityField
from .manybody import ParticleSet, RegimeReport, amplitude_table_discrete, regime_check, sphere_capacitance
from .sampling import PackingError, hardcore_positions, max_feasible_count

__all__ = ["ParticlePlan", "plan_from_density", "verify_plan", "sphere_capacitance", "PlanInfeasible"]


class PlanInfeasible(RuntimeError):
    def __init__(self, message, max_count=None):
        super().__init__(message)
        self.max_count = max_count


@dataclass(frozen=True)
class ParticlePlan:
    density: CapacitanceDensityField
    number_density: np.ndarray
    radius: float
    capacitance: float
    expected_count: float
    particles: ParticleSet
    seed: int | None
    regime: RegimeReport
    hard_core_factor: float = 10.0

    @property
    def count(self):
        return len(self.particles)


def plan_from_density(density: CapacitanceDensityField, a: float, seed=None, hard_core_factor=10.0, medium=None, count=None):
    """Sample a particle plan realizing ``C`` with spheres of radius ``a``.

    The particle count is Poisson with mean ``int N dx`` unless ``count`` is
    given.  Raises PlanInfeasible when the hard core cannot accommodate it.
    """
    if np.any(density.values < 0):
        raise ValueError("density must be nonnegative (clamp upstream)")
    cap = sphere_capacitance(a)
    N = density.values / cap
    expected = float(density.grid.integrate(N))
    rng = np.random.default_rng(seed)
    if count is None:
        count = int(rng.poisson(expected)) if expected > 0 else 0
    dmin = hard_core_factor * a
    limit = max_feasible_count(density.grid.volume, dmin)
    if count > limit:
        raise PlanInfeasible(f"{count} particles do not fit at spacing {dmin:.3g}; max feasible ~ {limit}", limit)
    if count:
        try:
            pts = hardcore_positions(density.grid, N, count, dmin, rng, radius=density.radius)
        except PackingError as exc:
            raise PlanInfeasible(str(exc), exc.max_feasible) from exc
        particles = ParticleSet(pts, np.full(count, a), np.full(count, cap))
    else:
        particles = ParticleSet.empty()
    medium = medium or BackgroundMedium.vacuum(1.0, density.radius)
    return ParticlePlan(density, N, float(a), cap, expected, particles, seed, regime_check(medium, particles), hard_core_factor)


@dataclass(frozen=True)
class PlanReport:
    relative_l2: float
    worst_direction: float
    worst_pair: tuple
    table: np.ndarray


def verify_plan(medium: BackgroundMedium, plan: ParticlePlan, target) -> PlanReport:
    """Discrete amplitude of the plan on the target's direction grid vs the target."""
    ao, ai = target.out_quad.nodes, target.in_quad.nodes
    table = amplitude_table_discrete(medium, plan.particles, ao, ai, check_regime=False)
    diff = table - target.values
    tnorm = np.linalg.norm(target.values)
    dnorm = np.linalg.norm(diff)
    rel = dnorm / tnorm if tnorm > 0 else dnorm
    scale = np.abs(target.values).max()
    err = np.abs(diff)
    i, j = np.unravel_index(int(np.argmax(err)), err.shape)
    worst = err[i, j] / scale if scale > 0 else err[i, j]
    return PlanReport(float(rel), float(worst), (int(i), int(j)), table)
