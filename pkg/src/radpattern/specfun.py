"""Spherical Bessel/Hankel functions and spherical harmonics.

Hankel functions use the outgoing normalization ``h_l(r) ~ e^{ir}/r``, i.e.
``h_l = i^{l+1} h_l^{(1)}`` where ``h_l^{(1)} = j_l + i y_l`` is the usual
spherical Hankel function of the first kind.  Every other module relies on
this convention only.

Spherical harmonics are orthonormal on S^2 with the Condon-Shortley phase.
Their continuation to complex directions is obtained from the homogeneous
harmonic polynomial ``|x|^l Y_lm(x/|x|)``, evaluated with ``|x|^2`` replaced
by ``theta . theta`` (no square roots, no branch cuts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-12


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


@dataclass(frozen=True)
class HarmonicIndex:
    ell: int
    m: int

    def __post_init__(self):
        if self.ell < 0 or abs(self.m) > self.ell:
            raise DomainError(f"invalid harmonic index (ell={self.ell}, m={self.m})")


@dataclass(frozen=True)
class ComplexDirection:
    """A point of the complex quadric ``{theta in C^3 : theta . theta = 1}``."""

    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=complex).reshape(3)
        object.__setattr__(self, "components", c)
        if abs(np.sum(c * c) - 1.0) > UNIT_TOL * max(1.0, float(np.sum(np.abs(c) ** 2))):
            raise DomainError(f"theta . theta = {np.sum(c * c)} != 1")

    @property
    def kappa(self) -> float:
        return float(np.linalg.norm(self.components.imag))

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(np.abs(self.components)))


def harmonic_indices(ell_max):
    """All (ell, m) pairs with ell <= ell_max, in the flat ordering ``ell^2 + ell + m``."""
    return [(ell, m) for ell in range(ell_max + 1) for m in range(-ell, ell + 1)]


def flat_index(ell, m):
    return ell * ell + ell + m


# ---------------------------------------------------------------------------
# Radial functions
# ---------------------------------------------------------------------------

def _check_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("spherical Bessel functions need r > 0")
    return r


def spherical_jn_all(ell_max, r):
    """j_0..j_{ell_max} at ``r``; shape ``(ell_max + 1,) + r.shape``.

    Miller's downward recurrence started at ``ell_max + max(15, ceil(r))``
    above the top degree and normalized against ``sin(r)/r``.  Where
    ``r > ell_max`` the forward recurrence is stable and used instead.
    """
    r = _check_radius(r)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.empty((ell_max + 1,) + r.shape)
    j0 = np.sin(r) / r

    up = r > ell_max
    if np.any(up):
        ru = r[up]
        vals = np.empty((ell_max + 1, ru.size))
        vals[0] = np.sin(ru) / ru
        if ell_max >= 1:
            vals[1] = np.sin(ru) / ru**2 - np.cos(ru) / ru
        for ell in range(1, ell_max):
            vals[ell + 1] = (2 * ell + 1) / ru * vals[ell] - vals[ell - 1]
        out[:, up] = vals

    down = ~up
    if np.any(down):
        rd = r[down]
        start = ell_max + max(15, int(math.ceil(float(rd.max()))))
        # extra margin so that small ell_max with r close to it still converges
        start += int(math.ceil(math.sqrt(40.0 * max(ell_max, 1))))
        vals = np.empty((ell_max + 1, rd.size))
        f_next = np.zeros_like(rd)
        f_cur = np.full_like(rd, 1e-300)
        for ell in range(start, 0, -1):
            f_prev = (2 * ell + 1) / rd * f_cur - f_next
            f_next, f_cur = f_cur, f_prev
            if ell - 1 <= ell_max:
                vals[ell - 1] = f_cur
            big = np.abs(f_cur) > 1e250
            if np.any(big):
                scale = np.where(big, 1e-250, 1.0)
                f_cur = f_cur * scale
                f_next = f_next * scale
                vals[ell - 1 :] *= scale
        # normalize with whichever of j0, j1 is better conditioned
        j0d = np.sin(rd) / rd
        j1d = np.sin(rd) / rd**2 - np.cos(rd) / rd
        use0 = np.abs(j0d) >= np.abs(j1d) if ell_max >= 1 else np.ones(rd.shape, bool)
        if ell_max >= 1:
            norm = np.where(use0, j0d / vals[0], j1d / vals[1])
        else:
            norm = j0d / vals[0]
        out[:, down] = vals * norm

    out[0] = j0
    return out[:, 0] if scalar else out


def spherical_yn_all(ell_max, r):
    """y_0..y_{ell_max} by forward recurrence (stable for the growing solution)."""
    r = _check_radius(r)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.empty((ell_max + 1,) + r.shape)
    out[0] = -np.cos(r) / r
    if ell_max >= 1:
        out[1] = -np.cos(r) / r**2 - np.sin(r) / r
    with np.errstate(over="ignore", invalid="ignore"):
        for ell in range(1, ell_max):
            out[ell + 1] = (2 * ell + 1) / r * out[ell] - out[ell - 1]
    return out[:, 0] if scalar else out


def spherical_bessel_j(ell, r):
    """Regular spherical Bessel function ``j_ell(r)`` for ``r > 0``."""
    if ell < 0:
        raise DomainError("degree must be nonnegative")
    return spherical_jn_all(ell, r)[ell]


def spherical_hankel_h_all(ell_max, r):
    """Outgoing Hankel functions ``h_0..h_{ell_max}`` with ``h_l(r) ~ e^{ir}/r``."""
    j = spherical_jn_all(ell_max, r)
    y = spherical_yn_all(ell_max, r)
    phase = (1j) ** (np.arange(ell_max + 1) + 1)
    phase = phase.reshape((-1,) + (1,) * (np.ndim(j) - 1))
    return phase * (j + 1j * y)


def spherical_hankel_h(ell, r):
    """Outgoing spherical Hankel function normalized so ``h_ell(r) r e^{-ir} -> 1``."""
    if ell < 0:
        raise DomainError("degree must be nonnegative")
    return spherical_hankel_h_all(ell, r)[ell]


def spherical_jn_derivative(ell_max, r):
    """(j_l, j_l') for l = 0..ell_max."""
    j = spherical_jn_all(ell_max + 1, r)
    ells = np.arange(ell_max + 1).reshape((-1,) + (1,) * (np.ndim(j) - 1))
    r = np.asarray(r, dtype=float)
    jp = ells / r * j[:-1] - j[1:]
    return j[:-1], jp


def spherical_yn_derivative(ell_max, r):
    y = spherical_yn_all(ell_max + 1, r)
    ells = np.arange(ell_max + 1).reshape((-1,) + (1,) * (np.ndim(y) - 1))
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        yp = ells / r * y[:-1] - y[1:]
    return y[:-1], yp


# ---------------------------------------------------------------------------
# Legendre machinery
# ---------------------------------------------------------------------------

def legendre_all(ell_max, x):
    """P_0..P_{ell_max} at ``x`` (any shape, real or complex)."""
    x = np.asarray(x)
    out = np.empty((ell_max + 1,) + x.shape, dtype=np.result_type(x, float))
    out[0] = 1.0
    if ell_max >= 1:
        out[1] = x
    for ell in range(1, ell_max):
        out[ell + 1] = ((2 * ell + 1) * x * out[ell] - ell * out[ell - 1]) / (ell + 1)
    return out


def _reduced_legendre(ell_max, z, s):
    """Normalized reduced associated Legendre polynomials.

    Returns ``P[ell, m]`` (m >= 0) such that the homogeneous harmonic
    polynomial of degree ell, order m is ``P[ell, m](z, s) * (x + i y)^m`` where
    ``z`` is the third component and ``s = x.x``.  Shapes broadcast with ``z``.
    """
    z = np.asarray(z)
    s = np.asarray(s)
    shape = np.broadcast(z, s).shape
    dtype = np.result_type(z, s, float)
    P = np.zeros((ell_max + 1, ell_max + 1) + shape, dtype=dtype)
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, ell_max + 1):
        P[m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * P[m - 1, m - 1]
    for m in range(0, ell_max):
        P[m + 1, m] = math.sqrt(2 * m + 3) * z * P[m, m]
    for m in range(0, ell_max + 1):
        for ell in range(m + 2, ell_max + 1):
            a = math.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
            b = math.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1.0) ** 2 - 1.0))
            P[ell, m] = a * (z * P[ell - 1, m] - b * s * P[ell - 2, m])
    return P


def _harmonic_table(ell_max, vecs):
    """Y_lm for all (l, m) at 3-vectors ``vecs`` (shape (..., 3)), flat ordering.

    Evaluates the homogeneous polynomial form, so for unit real vectors this is
    the ordinary harmonic and for complex vectors on the quadric it is the
    analytic continuation.
    """
    vecs = np.asarray(vecs)
    x, y, z = vecs[..., 0], vecs[..., 1], vecs[..., 2]
    s = x * x + y * y + z * z
    P = _reduced_legendre(ell_max, z, s)
    plus = x + 1j * y
    minus = x - 1j * y
    out = np.empty(((ell_max + 1) ** 2,) + z.shape, dtype=complex)
    pow_p = np.ones(z.shape, dtype=complex)
    pow_m = np.ones(z.shape, dtype=complex)
    for m in range(ell_max + 1):
        sign = -1.0 if m % 2 else 1.0
        for ell in range(m, ell_max + 1):
            out[flat_index(ell, m)] = P[ell, m] * pow_p
            if m:
                out[flat_index(ell, -m)] = sign * P[ell, m] * pow_m
        pow_p = pow_p * plus
        pow_m = pow_m * minus
    return out


def _check_unit(dirs):
    dirs = np.asarray(dirs, dtype=float)
    if dirs.shape[-1] != 3:
        raise DomainError("directions must be 3-vectors")
    n = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise DomainError("direction is not a unit vector")
    return dirs


def spherical_harmonics_all(ell_max, dirs):
    """All Y_lm, l <= ell_max, at real unit directions; shape ((L+1)^2, ...)."""
    return _harmonic_table(ell_max, _check_unit(dirs))


def spherical_harmonic(idx: HarmonicIndex, direction):
    """Orthonormal spherical harmonic Y_{ell m} at a real unit vector."""
    return spherical_harmonics_all(idx.ell, direction)[flat_index(idx.ell, idx.m)]


def _check_quadric(theta):
    if isinstance(theta, ComplexDirection):
        return theta.components
    t = np.asarray(theta, dtype=complex)
    dots = np.sum(t * t, axis=-1)
    scale = np.maximum(1.0, np.sum(np.abs(t) ** 2, axis=-1))
    if np.any(np.abs(dots - 1.0) > UNIT_TOL * scale):
        raise DomainError("theta . theta != 1")
    return t


def spherical_harmonics_complex_all(ell_max, theta):
    """All continued Y_lm at points of the complex quadric."""
    return _harmonic_table(ell_max, _check_quadric(theta))


def spherical_harmonic_complex(idx: HarmonicIndex, theta):
    """Analytic continuation of Y_{ell m} to ``theta`` with ``theta . theta = 1``."""
    return spherical_harmonics_complex_all(idx.ell, theta)[flat_index(idx.ell, idx.m)]


def harmonic_bound(ell, kappa, r=None):
    """Upper bound ``e^{kappa r} / (sqrt(4 pi) |j_ell(r)|)`` on |Y_ell(theta)|.

    Valid for every r > 0; ``r`` defaults to ``ell + 1/2``.
    """
    if r is None:
        r = ell + 0.5
    return math.exp(kappa * r) / (math.sqrt(4 * math.pi) * abs(float(spherical_bessel_j(ell, r))))
