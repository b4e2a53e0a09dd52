"""Host medium: potential, Green's function, scattering solution and amplitude.

Radial potentials are represented as concentric homogeneous layers, for
which every partial wave is an explicit combination of ``j_l`` and ``y_l``.
A smooth radial wavenumber profile ``k0(r)`` is sampled at layer midpoints.
Non-radial potentials only go through the low-accuracy grid solver
:func:`born_series_green`, which exists as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .quadrature import VolumeGrid
from .specfun import legendre_all, spherical_harmonics_all
from .volume import VolumePotential, solve_lippmann_schwinger

LMAX_MARGIN = 25
LMAX_CAP = 400


class MediumError(ValueError):
    pass


class SingularityError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundMedium:
    """Host medium ``q = k^2 - k0(x)^2`` in the ball of radius ``b0``, 0 outside.

    ``profile`` is ``"vacuum"``, ``"homogeneous"`` (constant ``k0``) or
    ``"radial"`` (``k0_profile(r)`` sampled on ``n_layers`` shells).
    """

    k: float
    k0: float
    b0: float
    profile: str = "homogeneous"
    k0_profile: Callable | None = field(default=None, compare=False)
    n_layers: int = 32

    def __post_init__(self):
        if not self.k > 0:
            raise MediumError("k must be positive")
        if not self.b0 > 0:
            raise MediumError("b0 must be positive")
        if self.profile not in ("vacuum", "homogeneous", "radial"):
            raise MediumError(f"unknown profile {self.profile!r}")
        if self.profile == "vacuum":
            object.__setattr__(self, "k0", float(self.k))
        if self.profile == "radial" and self.k0_profile is None:
            raise MediumError("radial profile needs k0_profile")
        if np.any(self.layer_wavenumbers < self.k - 1e-14):
            raise MediumError("interior wavenumber must satisfy k0 >= k")

    @classmethod
    def vacuum(cls, k=1.0, b0=1.0):
        return cls(k=k, k0=k, b0=b0, profile="vacuum")

    @property
    def is_vacuum(self):
        return self.profile == "vacuum" or (
            self.profile == "homogeneous" and self.k0 == self.k
        )

    @property
    def layer_radii(self):
        if self.profile == "radial":
            return self.b0 * np.arange(1, self.n_layers + 1) / self.n_layers
        return np.array([self.b0])

    @property
    def layer_wavenumbers(self):
        if self.profile == "radial":
            mid = self.b0 * (np.arange(self.n_layers) + 0.5) / self.n_layers
            return np.asarray([float(self.k0_profile(r)) for r in mid])
        return np.array([float(self.k0)])

    def _layered(self):
        return _LayerModel.build(self.k, tuple(self.layer_radii), tuple(self.layer_wavenumbers))


def potential_q(medium: BackgroundMedium, x):
    """q(x) = k^2 - k0(x)^2 inside the host ball, 0 outside."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if medium.is_vacuum:
        return np.zeros(r.shape)
    radii = medium.layer_radii
    kw = medium.layer_wavenumbers
    layer = np.searchsorted(radii, r, side="left")
    inside = r <= medium.b0
    kin = kw[np.minimum(layer, len(kw) - 1)]
    return np.where(inside, medium.k**2 - kin**2, 0.0)


# ---------------------------------------------------------------------------
# Partial waves for concentric layers
# ---------------------------------------------------------------------------


def _jy(ell_max, x):
    ells = np.arange(ell_max + 1)[:, None]
    x = np.atleast_1d(np.asarray(x))
    if np.iscomplexobj(x) and not np.any(x.imag):
        x = x.real
    with np.errstate(over="ignore", invalid="ignore"):
        j = spherical_jn(ells, x[None])
        jp = spherical_jn(ells, x[None], derivative=True)
        y = spherical_yn(ells, x[None])
        yp = spherical_yn(ells, x[None], derivative=True)
    return j, jp, y, yp


@dataclass(frozen=True)
class _LayerModel:
    """Coefficients of regular (phi) and outgoing (psi) radial solutions.

    In layer n (wavenumber kappa_n, ``radii[n-1] <= r < radii[n]``) we have
    ``phi = a_n j(kappa_n r) + b_n y(kappa_n r)`` and
    ``psi = c_n j(kappa_n r) + d_n y(kappa_n r)``; the last entry is the
    exterior with wavenumber k.  Arrays have shape (layers + 1, ell_max + 1).
    """

    k: float
    radii: tuple
    kappas: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    ell_max: int

    @staticmethod
    @lru_cache(maxsize=64)
    def build(k, radii, kappas, ell_max=None):
        kap = np.asarray(kappas + (k,), dtype=complex)
        if ell_max is None:
            ell_max = LMAX_CAP
        L = np.arange(ell_max + 1)
        nl = len(kap)
        a = np.zeros((nl, L.size), dtype=complex)
        b = np.zeros_like(a)
        c = np.zeros_like(a)
        d = np.zeros_like(a)
        a[0] = 1.0
        for n, R in enumerate(radii):
            ka, kb = kap[n], kap[n + 1]
            ja, jpa, ya, ypa = (v[:, 0] for v in _jy(ell_max, ka * R))
            jb, jpb, yb, ypb = (v[:, 0] for v in _jy(ell_max, kb * R))
            with np.errstate(over="ignore", invalid="ignore"):
                f = a[n] * ja + b[n] * ya
                fp = ka * (a[n] * jpa + b[n] * ypa)
                # Wronskian of (j, y) at argument kb R is 1/(kb R)^2
                wr = (kb * R) ** 2
                a[n + 1] = wr * (f * ypb - fp * yb / kb)
                b[n + 1] = wr * (fp * jb / kb - f * jpb)
        # outgoing solution: h1 = j + i y outside, continued inward
        c[-1] = 1.0
        d[-1] = 1.0j
        for n in range(len(radii) - 1, -1, -1):
            R = radii[n]
            ka, kb = kap[n], kap[n + 1]
            ja, jpa, ya, ypa = (v[:, 0] for v in _jy(ell_max, ka * R))
            jb, jpb, yb, ypb = (v[:, 0] for v in _jy(ell_max, kb * R))
            with np.errstate(over="ignore", invalid="ignore"):
                f = c[n + 1] * jb + d[n + 1] * yb
                fp = kb * (c[n + 1] * jpb + d[n + 1] * ypb)
                wr = (ka * R) ** 2
                c[n] = wr * (f * ypa - fp * ya / ka)
                d[n] = wr * (fp * ja / ka - f * jpa)
        return _LayerModel(k, radii, kap, a, b, c, d, ell_max)

    @property
    def transition(self):
        """T_l with exterior regular solution proportional to j + T h1."""
        A, B = self.a[-1], self.b[-1]
        with np.errstate(invalid="ignore", over="ignore"):
            T = -1j * B / (A + 1j * B)
        # the recurrences overflow far beyond l ~ k b0, where T_l has long underflowed
        return np.where(np.isfinite(T), T, 0.0)

    @property
    def norm(self):
        return self.a[-1] + 1j * self.b[-1]

    @property
    def wronskian_const(self):
        """c_l in G_l = phi(r<) psi(r>) / c_l."""
        A, B = self.a[-1], self.b[-1]
        return (B - 1j * A) / self.k

    def layer_of(self, r):
        return np.searchsorted(np.asarray(self.radii), r, side="right")

    def radial(self, which, ell_max, r):
        """phi or psi for l = 0..ell_max at radii ``r``; shape (ell_max+1, n)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros((ell_max + 1, r.size), dtype=complex)
        lay = self.layer_of(r)
        p, q = (self.a, self.b) if which == "phi" else (self.c, self.d)
        for n in np.unique(lay):
            sel = lay == n
            x = self.kappas[n] * r[sel]
            if which == "phi" and n == 0:
                xr = x.real
                vals = np.zeros((ell_max + 1, xr.size))
                pos = xr > 0
                if np.any(pos):
                    vals[:, pos] = spherical_jn(np.arange(ell_max + 1)[:, None], xr[pos][None])
                vals[0, ~pos] = 1.0
                out[:, sel] = p[0, : ell_max + 1, None] * vals
                continue
            j, _, y, _ = _jy(ell_max, x)
            with np.errstate(over="ignore", invalid="ignore"):
                val = p[n, : ell_max + 1, None] * j + q[n, : ell_max + 1, None] * y
            out[:, sel] = val
        return out


def _finite_or_zero(v):
    """Drop partial-wave terms whose factors overflowed.

    Each guarded term is bounded and decays in l; a non-finite value only
    appears once one factor has overflowed and the other underflowed, where
    the true term is negligible.  ``np.nan_to_num`` would turn inf into 1e308.
    """
    return np.where(np.isfinite(v), v, 0.0)


def default_ell_max(medium: BackgroundMedium, radius: float):
    kmax = max(medium.k, float(np.max(medium.layer_wavenumbers)))
    return int(min(LMAX_CAP, math.ceil(kmax * max(radius, medium.b0)) + LMAX_MARGIN))


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def scattering_solution_U0(medium: BackgroundMedium, x, alpha, ell_max=None):
    """U0(x, alpha): total field of the host medium for incidence e^{ik alpha.x}.

    Outside the host ball this is the plane wave plus the scattered partial
    waves ``i^l (2l+1) T_l h1_l(kr) P_l``, which converge at l ~ k b0 for any
    r; inside, the regular radial solutions are summed directly.
    """
    x = np.asarray(x, dtype=float)
    alpha = _unit(alpha)
    if medium.is_vacuum:
        return np.exp(1j * medium.k * (x @ alpha))
    shape = x.shape[:-1]
    pts = x.reshape(-1, 3)
    r = np.linalg.norm(pts, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosg = np.where(r > 0, (pts @ alpha) / np.where(r > 0, r, 1.0), 1.0)
    model = medium._layered()
    out = np.empty(len(pts), dtype=complex)
    outside = r >= medium.b0
    inside = ~outside
    if np.any(inside):
        L = ell_max if ell_max is not None else default_ell_max(medium, float(r[inside].max()))
        phi = model.radial("phi", L, r[inside]) / model.norm[: L + 1, None]
        ells = np.arange(L + 1)
        coef = (1j) ** ells * (2 * ells + 1)
        out[inside] = (coef[:, None] * _finite_or_zero(phi) * legendre_all(L, cosg[inside])).sum(axis=0)
    if np.any(outside):
        L = ell_max if ell_max is not None else default_ell_max(medium, medium.b0)
        ells = np.arange(L + 1)
        kr = medium.k * r[outside]
        with np.errstate(over="ignore", invalid="ignore"):
            h1 = spherical_jn(ells[:, None], kr[None]) + 1j * spherical_yn(ells[:, None], kr[None])
        coef = (1j) ** ells * (2 * ells + 1) * model.transition[: L + 1]
        scat = (coef[:, None] * _finite_or_zero(h1) * legendre_all(L, cosg[outside])).sum(axis=0)
        out[outside] = np.exp(1j * medium.k * (pts[outside] @ alpha)) + scat
    return out.reshape(shape)


def _radial_U0(medium: BackgroundMedium, model, r, ell_max):
    """R_l(r) with U0(x, alpha) = sum_l i^l (2l+1) R_l(r) P_l(alpha . x/r)."""
    out = np.empty((ell_max + 1, r.size), dtype=complex)
    inside = r < medium.b0
    if np.any(inside):
        with np.errstate(invalid="ignore", over="ignore"):
            phi = model.radial("phi", ell_max, r[inside]) / model.norm[: ell_max + 1, None]
        out[:, inside] = _finite_or_zero(phi)
    if np.any(~inside):
        ells = np.arange(ell_max + 1)[:, None]
        kr = medium.k * r[~inside][None]
        T = model.transition[: ell_max + 1, None]
        out[:, ~inside] = spherical_jn(ells, kr) + T * (spherical_jn(ells, kr) + 1j * spherical_yn(ells, kr))
    return out


def U0_moments(medium: BackgroundMedium, x, f, alpha, ell_max=None, chunk=8192):
    """``sum_p U0(x_p, alpha_j) f_p`` for many directions ``alpha_j`` at once.

    Uses the addition theorem: the points are projected once onto
    ``R_l(r) conj(Y_lm(x/r))`` and each direction then costs (L+1)^2.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    f = np.asarray(f).reshape(-1)
    alpha = _unit(np.atleast_2d(alpha))
    if medium.is_vacuum:
        return np.exp(1j * medium.k * (alpha @ x.T)) @ f
    r = np.linalg.norm(x, axis=-1)
    if ell_max is None:
        ell_max = default_ell_max(medium, float(r.max()) if r.size else medium.b0)
    model = medium._layered()
    ells = np.repeat(np.arange(ell_max + 1), 2 * np.arange(ell_max + 1) + 1)
    moments = np.zeros((ell_max + 1) ** 2, dtype=complex)
    for start in range(0, len(x), chunk):
        sl = slice(start, start + chunk)
        rr = r[sl]
        dirs = np.where(rr[:, None] > 0, x[sl] / np.where(rr > 0, rr, 1.0)[:, None], [0.0, 0.0, 1.0])
        R = _radial_U0(medium, model, rr, ell_max)
        Y = spherical_harmonics_all(ell_max, dirs)
        moments += (np.conj(Y) * R[ells]) @ f[sl]
    coef = 4 * math.pi * (1j) ** ells * moments
    return spherical_harmonics_all(ell_max, alpha).T @ coef


def background_amplitude_Aq(medium: BackgroundMedium, alpha_out, alpha_in, ell_max=None):
    """Far-field coefficient A_q(alpha', alpha) of U0; zero in vacuum."""
    ao = _unit(alpha_out)
    ai = _unit(alpha_in)
    cosg = np.sum(ao * ai, axis=-1)
    if medium.is_vacuum:
        return np.zeros(np.shape(cosg), dtype=complex)
    if ell_max is None:
        ell_max = default_ell_max(medium, medium.b0)
    model = medium._layered()
    T = model.transition[: ell_max + 1]
    ells = np.arange(ell_max + 1)
    P = legendre_all(ell_max, cosg)
    coef = (2 * ells + 1) * T / (1j * medium.k)
    return np.tensordot(coef, P, axes=(0, 0))


def _free_green(k, x, y):
    d = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    if np.any(d == 0):
        raise SingularityError("Green's function evaluated at x = y")
    return np.exp(1j * k * d) / (4 * math.pi * d)


def free_green(k, x, y):
    """g(x, y) = e^{ik|x-y|} / (4 pi |x-y|)."""
    return _free_green(k, x, y)


def green_function(medium: BackgroundMedium, x, y, ell_max=None):
    """Outgoing Green's function G(x, y) of ``laplacian + k^2 - q``.

    In vacuum this is g(x, y).  Otherwise the partial-wave series is summed;
    when both points lie in the same layer the free kernel of that layer is
    subtracted analytically and only the smooth remainder is expanded.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    if medium.is_vacuum:
        return _free_green(medium.k, x, y)
    shape = x.shape[:-1]
    X = x.reshape(-1, 3)
    Y = y.reshape(-1, 3)
    if len(X) == 0:
        return np.zeros(shape, dtype=complex)
    dist = np.linalg.norm(X - Y, axis=-1)
    if np.any(dist == 0):
        raise SingularityError("Green's function evaluated at x = y")
    rx = np.linalg.norm(X, axis=-1)
    ry = np.linalg.norm(Y, axis=-1)
    r_lo = np.minimum(rx, ry)
    r_hi = np.maximum(rx, ry)
    model = medium._layered()
    lay_lo = model.layer_of(r_lo)
    lay_hi = model.layer_of(r_hi)
    same = lay_lo == lay_hi
    with np.errstate(invalid="ignore", divide="ignore"):
        cosg = np.clip(np.sum(X * Y, axis=-1) / np.where(rx * ry > 0, rx * ry, 1.0), -1, 1)
    kmax = max(medium.k, float(np.max(medium.layer_wavenumbers)))

    if ell_max is None:
        # partial waves decay like ratio^l: r</r> across layers, and for the
        # smooth same-layer remainder the reflections off the bounding interfaces
        radii = np.asarray(model.radii)
        nl = len(radii)
        ratio = r_lo / np.maximum(r_hi, 1e-300)
        if np.any(same):
            L = lay_lo[same]
            prod = r_lo[same] * r_hi[same]
            r_out2 = np.where(L < nl, radii[np.minimum(L, nl - 1)] ** 2, np.inf)
            r_in2 = np.where(L > 0, radii[np.maximum(L - 1, 0)] ** 2, 0.0)
            ratio[same] = np.maximum(r_in2 / np.maximum(prod, 1e-300), prod / r_out2)
        ratio = np.minimum(ratio, 1 - 1e-6)
        with np.errstate(divide="ignore"):
            extra = np.where(ratio > 0, math.log(1e-10) / np.log(ratio), 0.0)
        ell_max = int(min(LMAX_CAP, math.ceil(kmax * float(r_hi.max()) + LMAX_MARGIN + float(extra.max()))))

    phi = model.radial("phi", ell_max, r_lo)
    psi = model.radial("psi", ell_max, r_hi)
    ells = np.arange(ell_max + 1)
    cl = model.wronskian_const[: ell_max + 1]
    with np.errstate(invalid="ignore", over="ignore"):
        gl = _finite_or_zero(phi * psi / cl[:, None])
    if np.any(same):
        # subtract the free kernel of the shared layer: i kappa j(kappa r<) h1(kappa r>)
        kap = model.kappas[lay_lo[same]]
        xs, xb = kap * r_lo[same], kap * r_hi[same]
        jl = np.zeros((ell_max + 1, xs.size), dtype=complex)
        pos = np.abs(xs) > 0
        jl[:, pos] = spherical_jn(ells[:, None], xs[pos][None])
        jl[0, ~pos] = 1.0
        with np.errstate(over="ignore", invalid="ignore"):
            hb = spherical_jn(ells[:, None], xb[None]) + 1j * spherical_yn(ells[:, None], xb[None])
            with np.errstate(invalid="ignore", over="ignore"):
                free_l = _finite_or_zero(1j * kap[None] * jl * hb)
        gl[:, same] -= free_l
        kap_same = kap
    P = legendre_all(ell_max, cosg)
    out = np.sum(((2 * ells + 1) / (4 * math.pi))[:, None] * gl * P, axis=0)
    if np.any(same):
        d = dist[same]
        out[same] += np.exp(1j * kap_same * d) / (4 * math.pi * d)
    return out.reshape(shape)


def born_series_green(medium: BackgroundMedium, x, y, grid: VolumeGrid, tol=1e-10):
    """Solve ``G(., y) = g(., y) - int q(z) g(., z) G(z, y) dz`` on a ball grid.

    Works for any potential sampled on ``grid`` (here the medium's q); low
    accuracy, meant only as an independent check of :func:`green_function`.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float)
    k = medium.k
    op = VolumePotential(grid, k)
    q = potential_q(medium, grid.points)
    rhs = _free_green(k, grid.points, y[None])
    G_grid, _, _ = solve_lippmann_schwinger(op, q, rhs, tol=tol)
    # evaluate at x off-grid by direct quadrature of the integral equation
    gxz = np.exp(1j * k * np.linalg.norm(x[:, None] - grid.points[None], axis=-1)) / (
        4 * math.pi * np.linalg.norm(x[:, None] - grid.points[None], axis=-1)
    )
    return _free_green(k, x, y[None]) - gxz @ (grid.weights * q * G_grid)
