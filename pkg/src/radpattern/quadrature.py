"""Quadrature on the unit sphere, on spherical shells, and on balls."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in cos(polar) times uniform azimuth.

    Integrates every spherical harmonic of degree <= ``degree`` exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Integrate samples at the nodes; the node axis is the last one."""
        return np.asarray(values) @ self.weights


@dataclass(frozen=True)
class ShellSpec:
    b0: float
    b1: float
    b2: float

    def __post_init__(self):
        if not (0 < self.b0 < self.b1 < self.b2):
            raise QuadratureError(f"need 0 < b0 < b1 < b2, got {self.b0}, {self.b1}, {self.b2}")


@dataclass(frozen=True)
class VolumeGrid:
    """Collocation points with positive weights.

    For Cartesian ball grids ``shape``/``index`` locate each cell in the
    bounding box (used by FFT convolution); they are None for shell grids.
    """

    points: np.ndarray
    weights: np.ndarray
    h: float
    origin: np.ndarray | None = None
    shape: tuple | None = None
    index: np.ndarray | None = None
    fraction: np.ndarray | None = None

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        return np.asarray(values) @ self.weights

    @property
    def volume(self):
        return float(self.weights.sum())


def build_sphere_quadrature(degree: int) -> SphereQuadrature:
    if degree < 1:
        raise QuadratureError("degree must be >= 1")
    n_theta = (degree + 2) // 2
    n_phi = degree + 1
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - t**2)
    nodes = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(t, n_phi),
        ],
        axis=-1,
    )
    nodes /= np.linalg.norm(nodes, axis=-1, keepdims=True)
    weights = np.repeat(wt, n_phi) * (2 * math.pi / n_phi)
    return SphereQuadrature(nodes, weights, degree)


def build_shell_grid(spec: ShellSpec, n_r: int, ang_degree: int) -> VolumeGrid:
    """Product rule on ``b1 <= |x| <= b2``: radial Gauss-Legendre x sphere rule."""
    if not isinstance(spec, ShellSpec):
        raise QuadratureError("spec must be a ShellSpec")
    if n_r < 2:
        raise QuadratureError("n_r must be >= 2")
    sq = build_sphere_quadrature(ang_degree)
    t, wt = np.polynomial.legendre.leggauss(n_r)
    half = 0.5 * (spec.b2 - spec.b1)
    r = spec.b1 + half * (t + 1)
    wr = half * wt * r**2
    points = (r[:, None, None] * sq.nodes[None]).reshape(-1, 3)
    weights = (wr[:, None] * sq.weights[None]).ravel()
    h = float(max(np.max(np.diff(r)) if n_r > 1 else half, spec.b2 * math.pi / max(ang_degree, 1)))
    return VolumeGrid(points, weights, h)


def _cube_fraction(centers, h, radius, n_sub):
    offs = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    sub = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), -1).reshape(-1, 3) * h
    inside = np.linalg.norm(centers[:, None, :] + sub[None], axis=-1) <= radius
    return inside.mean(axis=1)


def build_ball_grid(radius: float, n: int, n_sub: int = 8) -> VolumeGrid:
    """Uniform Cartesian cells of side ``2 radius / n`` clipped to the ball.

    Cells cut by the sphere carry their inside volume fraction (sampled on an
    ``n_sub^3`` sub-lattice, then rescaled so the weights sum to the exact
    ball volume).
    """
    if radius <= 0 or n < 2:
        raise QuadratureError("need radius > 0 and n >= 2")
    h = 2.0 * radius / n
    c = -radius + h * (np.arange(n) + 0.5)
    X = np.stack(np.meshgrid(c, c, c, indexing="ij"), -1)
    idx = np.stack(np.meshgrid(*(np.arange(n),) * 3, indexing="ij"), -1)
    dist = np.linalg.norm(X, axis=-1)
    half_diag = h * math.sqrt(3) / 2
    full = dist + half_diag <= radius
    cut = (np.abs(dist - radius) < half_diag) & ~full
    frac = np.zeros(dist.shape)
    frac[full] = 1.0
    frac[cut] = _cube_fraction(X[cut], h, radius, n_sub)
    keep = frac > 0
    frac_k = frac[keep]
    exact = 4.0 / 3.0 * math.pi * radius**3
    n_full = float(np.sum(frac_k == 1.0))
    partial = frac_k < 1.0
    target_partial = exact / h**3 - n_full
    if np.any(partial) and target_partial > 0:
        frac_k = frac_k.copy()
        frac_k[partial] *= target_partial / frac_k[partial].sum()
    weights = frac_k * h**3
    return VolumeGrid(
        points=X[keep],
        weights=weights,
        h=h,
        origin=np.full(3, -radius + 0.5 * h),
        shape=(n, n, n),
        index=idx[keep],
        fraction=frac_k,
    )
