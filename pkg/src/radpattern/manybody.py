"""Small soft particles: the linear system for the charges Q_j and its fields.

Each particle is reduced to a point charge at its centre t_j,

    Q_j = C_j (-U0(t_j, alpha) - sum_{m != j} G(t_j, t_m) Q_m),

after which the radiation pattern is
``A(alpha', alpha) = A_q + (1/4pi) sum_m U0(t_m, -alpha') Q_m``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .background import (
    BackgroundMedium,
    background_amplitude_Aq,
    green_function,
    scattering_solution_U0,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 5000
COND_LIMIT = 1e12


class RegimeError(ValueError):
    pass


class ConditioningError(RuntimeError):
    pass


def sphere_capacitance(a):
    """Capacitance 4 pi a of a conducting sphere (kernel 1/(4 pi |x - y|))."""
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 0)):
        raise ValueError("radius must be positive")
    return 4 * math.pi * a if a.ndim else float(4 * math.pi * a)


@dataclass(frozen=True)
class ParticleSet:
    positions: np.ndarray
    radii: np.ndarray
    capacitances: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        rad = np.asarray(self.radii, dtype=float).reshape(-1)
        cap = np.asarray(self.capacitances, dtype=float).reshape(-1)
        if not (len(pos) == len(rad) == len(cap)):
            raise ValueError("positions, radii and capacitances differ in length")
        if np.any(rad <= 0) or np.any(cap <= 0):
            raise ValueError("radii and capacitances must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radii", rad)
        object.__setattr__(self, "capacitances", cap)

    @classmethod
    def spheres(cls, positions, radii):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(positions),))
        return cls(positions, radii, sphere_capacitance(radii) if len(radii) else np.zeros(0))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    def __len__(self):
        return len(self.radii)

    def min_distance(self):
        """Smallest centre-to-centre distance (inf for fewer than two particles)."""
        if len(self) < 2:
            return math.inf
        from scipy.spatial import cKDTree

        d, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(d[:, 1].min())

    def closest_pair(self):
        from scipy.spatial import cKDTree

        d, i = cKDTree(self.positions).query(self.positions, k=2)
        j = int(np.argmin(d[:, 1]))
        return j, int(i[j, 1])


@dataclass(frozen=True)
class ChargeSolution:
    charges: np.ndarray
    alpha: np.ndarray
    residual: float


@dataclass(frozen=True)
class RegimeReport:
    k0a: float
    ka: float
    d_over_a: float
    max_k0a: float = 0.1
    min_d_over_a: float = 10.0
    size_ok: bool = field(init=False)
    distance_ok: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "size_ok", self.k0a <= self.max_k0a)
        object.__setattr__(self, "distance_ok", self.d_over_a >= self.min_d_over_a)

    @property
    def valid(self):
        return self.size_ok and self.distance_ok


def regime_check(medium: BackgroundMedium, particles: ParticleSet, max_k0a=0.1, min_d_over_a=10.0) -> RegimeReport:
    """Check ``k0 a << 1`` and ``d >> a`` with configurable thresholds."""
    if len(particles) == 0:
        return RegimeReport(0.0, 0.0, math.inf, max_k0a, min_d_over_a)
    a = float(particles.radii.max())
    kmax = max(medium.k, float(np.max(medium.layer_wavenumbers)))
    d = particles.min_distance()
    return RegimeReport(kmax * a, medium.k * a, d / a, max_k0a, min_d_over_a)


def interaction_matrix(medium: BackgroundMedium, positions):
    """[G(t_j, t_m)] with a zero diagonal."""
    t = np.asarray(positions, dtype=float)
    n = len(t)
    G = np.zeros((n, n), dtype=complex)
    if n < 2:
        return G
    iu = np.triu_indices(n, 1)
    if medium.is_vacuum:
        d = np.linalg.norm(t[iu[0]] - t[iu[1]], axis=-1)
        vals = np.exp(1j * medium.k * d) / (4 * math.pi * d)
    else:
        vals = np.concatenate(
            [green_function(medium, t[iu[0][s]], t[iu[1][s]]) for s in _chunks(len(iu[0]), 20000)]
        )
    G[iu] = vals
    G[(iu[1], iu[0])] = vals  # reciprocity G(x, y) = G(y, x)
    return G


def _chunks(n, size):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _as_dirs(alpha):
    a = np.asarray(alpha, dtype=float)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


class ChargeSolver:
    """Factorized system for one medium and particle set, reusable over alphas."""

    def __init__(self, medium: BackgroundMedium, particles: ParticleSet):
        self.medium = medium
        self.particles = particles
        n = len(particles)
        self.G = interaction_matrix(medium, particles.positions)
        C = particles.capacitances
        self.matrix = np.eye(n, dtype=complex) + C[:, None] * self.G
        self._lu = None
        if 0 < n <= DENSE_LIMIT:
            self._lu = scipy.linalg.lu_factor(self.matrix)
            self._check_conditioning()

    def _check_conditioning(self):
        n = len(self.particles)
        if n < 2:
            return
        anorm = np.linalg.norm(self.matrix, 1)
        # Hager-style 1-norm estimate of the inverse through a few solves
        x = np.full(n, 1.0 / n, dtype=complex)
        est = 0.0
        for _ in range(5):
            y = scipy.linalg.lu_solve(self._lu, x)
            est_new = np.abs(y).sum()
            s = np.where(y != 0, y / np.abs(y), 1.0)
            z = scipy.linalg.lu_solve(self._lu, s, trans=2)
            j = int(np.argmax(np.abs(z)))
            if est_new <= est:
                break
            est = est_new
            x = np.zeros(n, dtype=complex)
            x[j] = 1.0
        cond = anorm * est
        if not np.isfinite(cond) or cond > COND_LIMIT:
            i, j = self.particles.closest_pair()
            raise ConditioningError(
                f"charge system ill-conditioned (cond ~ {cond:.2e}); closest pair: particles {i} and {j}"
            )

    def solve(self, alpha):
        """Charges for one or several incident directions (rows of ``alpha``)."""
        alpha = _as_dirs(alpha)
        single = alpha.ndim == 1
        A = np.atleast_2d(alpha)
        n = len(self.particles)
        if n == 0:
            return np.zeros((0,) if single else (len(A), 0), dtype=complex)
        U = np.stack([scattering_solution_U0(self.medium, self.particles.positions, a) for a in A], axis=1)
        rhs = -self.particles.capacitances[:, None] * U
        if self._lu is not None:
            Q = scipy.linalg.lu_solve(self._lu, rhs)
        else:
            Q = np.stack([self._iterative(rhs[:, i]) for i in range(rhs.shape[1])], axis=1)
        Q = Q.T
        return Q[0] if single else Q

    def _iterative(self, b):
        n = len(b)
        op = LinearOperator((n, n), matvec=lambda v: self.matrix @ v, dtype=complex)
        x, info = gmres(op, b, rtol=1e-12, restart=100, maxiter=1000)
        if info != 0:
            raise ConditioningError(f"GMRES failed for the charge system (info={info})")
        return x

    def residual(self, Q, alpha):
        U = scattering_solution_U0(self.medium, self.particles.positions, alpha)
        b = -self.particles.capacitances * U
        r = np.linalg.norm(self.matrix @ Q - b)
        return float(r / max(np.linalg.norm(self.matrix, 2) * np.linalg.norm(Q), 1e-300))


def solve_charges(medium: BackgroundMedium, particles: ParticleSet, alpha, check_regime=True) -> ChargeSolution:
    """Solve the charge system for a single incident direction."""
    if check_regime:
        rep = regime_check(medium, particles)
        if not rep.valid:
            raise RegimeError(f"small-particle regime violated: k0a={rep.k0a:.3g}, d/a={rep.d_over_a:.3g}")
    alpha = _as_dirs(alpha)
    solver = ChargeSolver(medium, particles)
    Q = solver.solve(alpha)
    res = solver.residual(Q, alpha) if len(particles) else 0.0
    return ChargeSolution(Q, alpha, res)


def jacobi_charges(medium: BackgroundMedium, particles: ParticleSet, alpha, tol=1e-12, maxiter=10000):
    """Fixed-point iteration of the charge equations (converges when ||diag(C) G|| < 1)."""
    alpha = _as_dirs(alpha)
    G = interaction_matrix(medium, particles.positions)
    C = particles.capacitances
    b = -C * scattering_solution_U0(medium, particles.positions, alpha)
    Q = b.copy()
    for it in range(maxiter):
        Q_new = b - C * (G @ Q)
        if np.linalg.norm(Q_new - Q) <= tol * np.linalg.norm(Q_new):
            return Q_new, it + 1
        Q = Q_new
    raise RuntimeError("Jacobi iteration did not converge")


def amplitude_discrete(medium: BackgroundMedium, particles: ParticleSet, charges, alpha_out, alpha_in=None):
    """A(alpha', alpha) = A_q + (1/4 pi) sum_m U0(t_m, -alpha') Q_m.

    ``charges`` is a ChargeSolution or a raw (..., M) array; ``alpha_out`` may be
    a single direction or an (n, 3) array.
    """
    if isinstance(charges, ChargeSolution):
        Q, alpha_in = charges.charges, charges.alpha
    else:
        Q = np.asarray(charges)
    ao = _as_dirs(alpha_out)
    single = ao.ndim == 1
    AO = np.atleast_2d(ao)
    Aq = background_amplitude_Aq(medium, AO, alpha_in) if alpha_in is not None else 0.0
    if len(particles) == 0:
        out = np.broadcast_to(Aq, (len(AO),)).astype(complex)
        return out[0] if single else out
    t = particles.positions
    if medium.is_vacuum:
        U = np.exp(-1j * medium.k * (AO @ t.T))
    else:
        U = np.stack([scattering_solution_U0(medium, t, -a) for a in AO])
    out = Aq + (U @ Q) / (4 * math.pi)
    return out[0] if single else out


def amplitude_table_discrete(medium: BackgroundMedium, particles: ParticleSet, alpha_out, alpha_in, check_regime=True):
    """A(alpha'_i, alpha_j) on direction grids; one factorization for all alpha_j."""
    if check_regime and len(particles):
        rep = regime_check(medium, particles)
        if not rep.valid:
            raise RegimeError(f"small-particle regime violated: k0a={rep.k0a:.3g}, d/a={rep.d_over_a:.3g}")
    AO = np.atleast_2d(_as_dirs(alpha_out))
    AI = np.atleast_2d(_as_dirs(alpha_in))
    out = np.empty((len(AO), len(AI)), dtype=complex)
    if len(particles) == 0:
        for j, a in enumerate(AI):
            out[:, j] = background_amplitude_Aq(medium, AO, a)
        return out
    solver = ChargeSolver(medium, particles)
    Q = solver.solve(AI)  # (n_in, M)
    t = particles.positions
    if medium.is_vacuum:
        U = np.exp(-1j * medium.k * (AO @ t.T))
    else:
        U = np.stack([scattering_solution_U0(medium, t, -a) for a in AO])
    out[:] = U @ Q.T / (4 * math.pi)
    if not medium.is_vacuum:
        for j, a in enumerate(AI):
            out[:, j] += background_amplitude_Aq(medium, AO, a)
    return out


def effective_field(medium: BackgroundMedium, particles: ParticleSet, charges, x, self_radius_factor=2.0):
    """u_e(x) = U0(x, alpha) + sum_m G(x, t_m) Q_m, dropping particles within 2 a_m of x."""
    if isinstance(charges, ChargeSolution):
        Q, alpha = charges.charges, charges.alpha
    else:
        raise TypeError("effective_field needs a ChargeSolution")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    u = np.atleast_1d(scattering_solution_U0(medium, X, alpha)).astype(complex)
    if len(particles):
        t = particles.positions
        dist = np.linalg.norm(X[:, None] - t[None], axis=-1)
        near = dist <= self_radius_factor * particles.radii[None]
        if medium.is_vacuum:
            with np.errstate(divide="ignore", invalid="ignore"):
                G = np.exp(1j * medium.k * dist) / (4 * math.pi * dist)
        else:
            G = np.zeros(dist.shape, dtype=complex)
            far = ~near
            ii, jj = np.nonzero(far)
            G[ii, jj] = green_function(medium, X[ii], t[jj])
        G = np.where(near, 0.0, G)
        u = u + G @ Q
    return u[0] if single else u
