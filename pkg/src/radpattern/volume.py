"""FFT-accelerated Nystrom operator for the free-space Helmholtz volume potential.

``apply(f)`` returns ``sum_j g(x_i, y_j) f_j w_j`` over the cells of a
Cartesian ball grid, with the self-cell term replaced by the cell-averaged
kernel so that the 1/|x - y| singularity does not spoil convergence.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.fft import fftn, ifftn, next_fast_len
from scipy.sparse.linalg import LinearOperator, gmres

from .quadrature import VolumeGrid

# integral of 1/|x| over the unit cube [-1/2, 1/2]^3
UNIT_CUBE_INV_R = 2.3800772603083196


def _cube_average_kernel(k, h, n_gauss=16):
    """Mean of e^{ik|y|}/(4 pi |y|) over a cube of side h centred on the origin."""
    singular = UNIT_CUBE_INV_R / (4 * math.pi * h)
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    t = 0.5 * h * t
    w = 0.5 * w
    X, Y, Z = np.meshgrid(t, t, t, indexing="ij")
    W = w[:, None, None] * w[None, :, None] * w[None, None, :]
    r = np.sqrt(X**2 + Y**2 + Z**2)
    smooth = np.where(r > 0, np.expm1(1j * k * r) / (4 * math.pi * np.where(r > 0, r, 1.0)), 1j * k / (4 * math.pi))
    return singular + np.sum(W * smooth)


class VolumePotential:
    """Discrete free-space volume potential on a Cartesian ball grid."""

    def __init__(self, grid: VolumeGrid, k: float):
        if grid.shape is None:
            raise ValueError("volume potential needs a Cartesian grid")
        self.grid = grid
        self.k = float(k)
        n = grid.shape[0]
        h = grid.h
        m = next_fast_len(2 * n)
        self._m = m
        d = np.arange(m)
        d = np.where(d < m - n + 1, d, d - m).astype(float) * h
        D = np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = np.exp(1j * self.k * D) / (4 * math.pi * D)
        kern[0, 0, 0] = 0.0
        self._kern_hat = fftn(kern)
        self._self = _cube_average_kernel(self.k, h)
        self._idx = tuple(grid.index.T)
        self._n = n

    def apply(self, f):
        """``(K f)_i = sum_j g(x_i, y_j) w_j f_j`` with the corrected self term."""
        f = np.asarray(f)
        w = self.grid.weights
        buf = np.zeros((self._m,) * 3, dtype=complex)
        buf[self._idx] = f * w
        conv = ifftn(fftn(buf) * self._kern_hat)[self._idx]
        return conv + self._self * w * f


def solve_lippmann_schwinger(potential_op: VolumePotential, v, rhs, tol=1e-8, maxiter=500, restart=60):
    """Solve ``u + K(v u) = rhs`` by restarted GMRES.

    Returns ``(u, relative_residual, iterations)``.  Raises RuntimeError on
    non-convergence.
    """
    v = np.asarray(v)
    n = len(v)

    def mv(x):
        return x + potential_op.apply(v * x)

    op = LinearOperator((n, n), matvec=mv, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    u, info = gmres(op, rhs, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter, callback=cb, callback_type="pr_norm")
    res = np.linalg.norm(mv(u) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if info != 0 and res > 10 * tol:
        raise RuntimeError(f"GMRES did not converge (info={info}, residual={res:.3e})")
    return u, res, count[0]


def spectral_radius_estimate(potential_op: VolumePotential, v, n_iter=30, seed=0):
    """Power-iteration estimate of the spectral radius of ``f -> K(v f)``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(len(v)) + 1j * rng.standard_normal(len(v))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = potential_op.apply(v * x)
        lam = np.linalg.norm(y)
        if lam == 0:
            return 0.0
        x = y / lam
    return float(lam)
