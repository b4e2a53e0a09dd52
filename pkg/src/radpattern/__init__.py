"""Forward and inverse scattering by many small soft particles.

Forward models (discrete particle clouds and their homogenized limit), a
fixed-energy inversion recovering a capacitance density from a radiation
pattern, and a planner that turns that density into particle placements.
"""

from .background import BackgroundMedium, background_amplitude_Aq, green_function, scattering_solution_U0
from .homogenized import CapacitanceDensityField, EffectiveMediumSolver, gaussian_density
from .inverse import AmplitudeTable, InversionParams, make_theta_pair, reconstruct_density, resample_table
from .manybody import ParticleSet, amplitude_table_discrete, regime_check, solve_charges, sphere_capacitance
from .planner import ParticlePlan, plan_from_density, verify_plan
from .quadrature import ShellSpec, build_ball_grid, build_shell_grid, build_sphere_quadrature

__version__ = "0.1.0"

__all__ = [
    "AmplitudeTable",
    "BackgroundMedium",
    "CapacitanceDensityField",
    "EffectiveMediumSolver",
    "InversionParams",
    "ParticlePlan",
    "ParticleSet",
    "ShellSpec",
    "amplitude_table_discrete",
    "background_amplitude_Aq",
    "build_ball_grid",
    "build_shell_grid",
    "build_sphere_quadrature",
    "gaussian_density",
    "green_function",
    "make_theta_pair",
    "plan_from_density",
    "reconstruct_density",
    "resample_table",
    "regime_check",
    "scattering_solution_U0",
    "solve_charges",
    "sphere_capacitance",
    "verify_plan",
]
