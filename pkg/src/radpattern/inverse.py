"""Fixed-energy inversion: recover the Fourier transform of the potential.

Everything runs at wavenumber k = 1; tables at other k are rescaled on entry
(lengths times k, amplitudes times k, density divided by k^2).

For a frequency xi the steps are

1. pick complex directions theta, theta' with theta' - theta = xi and
   theta . theta = theta' . theta' = 1 (|theta| large),
2. continue the amplitude analytically, A(theta', alpha) = sum A_l(alpha) Y_l(theta'),
3. find nu(alpha) making e^{-i theta . x} int u(x, alpha) nu(alpha) dalpha
   close to 1 on the shell b1 <= |x| <= b2 (regularized least squares),
4. estimate ``-4 pi int A(theta', alpha) nu(alpha) dalpha``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .quadrature import ShellSpec, SphereQuadrature, VolumeGrid, build_ball_grid, build_shell_grid
from .specfun import (
    ComplexDirection,
    harmonic_bound,
    spherical_hankel_h_all,
    spherical_harmonics_all,
    spherical_harmonics_complex_all,
)

logger = logging.getLogger(__name__)


SYNTHESIS_FLOOR = 0.5


class InversionError(RuntimeError):
    pass


class TruncationError(InversionError):
    pass


@dataclass(frozen=True)
class AmplitudeTable:
    """A(alpha'_i, alpha_j) on outgoing x incoming sphere quadratures."""

    k: float
    out_quad: SphereQuadrature
    in_quad: SphereQuadrature
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (len(self.out_quad), len(self.in_quad)):
            raise ValueError(f"table shape {v.shape} does not match node counts")
        if not np.all(np.isfinite(v)):
            raise ValueError("amplitude table has non-finite entries")
        object.__setattr__(self, "values", v)

    def at_unit_wavenumber(self):
        """The same data in the k = 1 frame (amplitude has units of length)."""
        if self.k == 1.0:
            return self
        return replace(self, k=1.0, values=self.values * self.k)


@dataclass(frozen=True)
class MultipoleCoefficients:
    """A_lm(alpha_j), flat harmonic index first: shape ((L+1)^2, n_in)."""

    coeffs: np.ndarray
    ell_max: int
    in_quad: SphereQuadrature

    @property
    def degree_norms(self):
        """max over alpha of sqrt(sum_m |A_lm(alpha)|^2), per degree l."""
        out = np.empty(self.ell_max + 1)
        for ell in range(self.ell_max + 1):
            blk = self.coeffs[ell * ell : (ell + 1) ** 2]
            out[ell] = np.sqrt(np.sum(np.abs(blk) ** 2, axis=0)).max()
        return out


def multipole_expand(table: AmplitudeTable, ell_max: int) -> MultipoleCoefficients:
    """A_l(alpha) = int A(alpha', alpha) conj(Y_l(alpha')) dalpha' by quadrature."""
    if table.out_quad.degree < 2 * ell_max:
        raise InversionError(
            f"outgoing quadrature degree {table.out_quad.degree} < 2 * ell_max = {2 * ell_max}"
        )
    Y = spherical_harmonics_all(ell_max, table.out_quad.nodes)
    coeffs = (np.conj(Y) * table.out_quad.weights) @ table.values
    return MultipoleCoefficients(coeffs, ell_max, table.in_quad)


def resample_table(table: AmplitudeTable, out_degree: int, in_degree: int) -> AmplitudeTable:
    """Move a table onto product-rule nodes of the given degrees.

    Both directions are expanded in spherical harmonics up to half the source
    quadrature degree and re-evaluated; exact for band-limited amplitudes.
    """
    from .quadrature import build_sphere_quadrature

    oq, iq = build_sphere_quadrature(out_degree), build_sphere_quadrature(in_degree)
    vals = table.values
    for axis, (src, dst) in enumerate(((table.out_quad, oq), (table.in_quad, iq))):
        L = src.degree // 2
        coef = np.conj(spherical_harmonics_all(L, src.nodes)) * src.weights
        M = spherical_harmonics_all(L, dst.nodes).T @ coef
        vals = M @ vals if axis == 0 else vals @ M.T
    return AmplitudeTable(table.k, oq, iq, vals)


def envelope_bound(ell, b0):
    """Coefficient envelope sqrt(b0 / l) (b0 e / 2l)^(l+1) (constant omitted)."""
    ell = np.maximum(np.asarray(ell, dtype=float), 1.0)
    return np.sqrt(b0 / ell) * (b0 * math.e / (2 * ell)) ** (ell + 1)


@dataclass(frozen=True)
class ThetaPair:
    xi: np.ndarray
    theta: ComplexDirection
    theta_prime: ComplexDirection
    t: float
    r: float
    phi: float
    z1: complex
    z2: complex
    frame: np.ndarray

    @property
    def magnitude(self):
        """|theta|: Euclidean norm of the component moduli."""
        return self.theta.magnitude

    @property
    def kappa(self):
        return self.theta.kappa


def _frame(e3):
    e3 = e3 / np.linalg.norm(e3)
    trial = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - (trial @ e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3])


def theta_lower_bound(t):
    return math.sqrt(abs(0.5 - t * t / 8.0))


def make_theta_pair(xi, r_param: float) -> ThetaPair:
    """theta' = (t/2) e3 + z1 e1 + z2 e2, theta = theta' - xi, z1 = r e^{i phi}, z2 = conj(z1).

    ``r^2 cos(2 phi) = 1/2 - t^2/8`` makes both vectors lie on the quadric.
    """
    xi = np.asarray(xi, dtype=float).reshape(3)
    t = float(np.linalg.norm(xi))
    if not t > 0:
        raise ValueError("xi must be nonzero")
    lb = theta_lower_bound(t)
    if r_param < lb * (1 - 1e-14):
        raise ValueError(f"r_param {r_param} below lower bound {lb}")
    cos2phi = np.clip((0.5 - t * t / 8.0) / r_param**2, -1.0, 1.0)
    phi = 0.5 * math.acos(cos2phi)
    z1 = r_param * np.exp(1j * phi)
    z2 = r_param * np.exp(-1j * phi)
    F = _frame(xi)
    e1, e2, e3 = F
    theta_p = 0.5 * t * e3 + z1 * e1 + z2 * e2
    theta = theta_p - xi
    return ThetaPair(
        xi=xi,
        theta=ComplexDirection(theta),
        theta_prime=ComplexDirection(theta_p),
        t=t,
        r=float(r_param),
        phi=phi,
        z1=complex(z1),
        z2=complex(z2),
        frame=F,
    )


@dataclass(frozen=True)
class ContinuedAmplitude:
    values: np.ndarray  # A(theta', alpha_j)
    tail_estimate: float
    degree_contributions: np.ndarray


def amplitude_at_complex_direction(coeffs: MultipoleCoefficients, theta_prime, tail_tol=1e-3, check=True):
    """Truncated sum_l A_l(alpha) Y_l(theta') at every incoming node.

    The per-degree contributions must decay at ell_max: the last one may not
    exceed ``tail_tol`` times the largest, otherwise the continuation is
    dominated by truncation/noise and a TruncationError is raised.
    """
    L = coeffs.ell_max
    Y = spherical_harmonics_complex_all(L, theta_prime)
    contrib = Y[:, None] * coeffs.coeffs
    per_deg = np.empty(L + 1)
    for ell in range(L + 1):
        per_deg[ell] = np.abs(contrib[ell * ell : (ell + 1) ** 2].sum(axis=0)).max()
    values = contrib.sum(axis=0)
    peak = per_deg.max()
    tail = float(per_deg[-1])
    if L >= 2 and per_deg[-2] > 0 and per_deg[-1] < per_deg[-2]:
        ratio = per_deg[-1] / per_deg[-2]
        tail = float(per_deg[-1] * ratio / (1 - ratio))
    if check and peak > 0 and per_deg[-1] > tail_tol * peak:
        raise TruncationError(
            f"continued series not decaying at ell_max={L} "
            f"(last/peak = {per_deg[-1] / peak:.2e}); increase ell_max or decrease |theta|"
        )
    return ContinuedAmplitude(values, tail, per_deg)


def choose_ell_max(coeffs: MultipoleCoefficients, theta_prime, tail_tol=1e-3, noise=1e-13):
    """Largest degree whose continued contribution is still above the data noise.

    Degrees whose coefficients sit at the quadrature noise floor are dropped:
    multiplying noise by the growth of Y_l(theta') only adds error.
    """
    norms = coeffs.degree_norms
    top = norms.max()
    if top == 0:
        return 0
    good = np.nonzero(norms > noise * top)[0]
    return int(good.max()) if len(good) else 0


def truncate(coeffs: MultipoleCoefficients, ell_max):
    ell_max = min(ell_max, coeffs.ell_max)
    return MultipoleCoefficients(coeffs.coeffs[: (ell_max + 1) ** 2], ell_max, coeffs.in_quad)


# ---------------------------------------------------------------------------
# Least-squares synthesis of e^{i theta . x} on the shell
# ---------------------------------------------------------------------------


@dataclass
class ShellProblem:
    """Scattering solutions u(x_p, alpha_j) on a shell grid (k = 1).

    ``u = e^{i alpha . x} + sum_l A_l(alpha) Y_l(x/|x|) h_l(|x|)``, valid
    for |x| > b0.  Independent of theta, so it is built once per table.
    """

    shell: ShellSpec
    grid: VolumeGrid
    in_quad: SphereQuadrature
    u: np.ndarray

    @classmethod
    def build(cls, coeffs: MultipoleCoefficients, shell: ShellSpec, n_r=6, ang_degree=None):
        if ang_degree is None:
            ang_degree = max(2 * coeffs.in_quad.degree, 20)
        grid = build_shell_grid(shell, n_r, ang_degree)
        x = grid.points
        r = np.linalg.norm(x, axis=-1)
        alphas = coeffs.in_quad.nodes
        u = np.exp(1j * (x @ alphas.T))
        L = coeffs.ell_max
        Y = spherical_harmonics_all(L, x / r[:, None])
        h = spherical_hankel_h_all(L, r)
        ells = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
        u += (Y * h[ells]).T @ coeffs.coeffs
        return cls(shell, grid, coeffs.in_quad, u)

    def design(self, pair: ThetaPair):
        """Rows: sqrt(W_p) e^{-i theta.x_p} u(x_p, alpha_j) w_j / sqrt(w_j)."""
        x = self.grid.points
        e = np.exp(-1j * (x @ pair.theta.components))
        sw = np.sqrt(self.grid.weights)
        wi = self.in_quad.weights
        return (sw * e)[:, None] * self.u * np.sqrt(wi)[None, :], sw

    def functional(self, pair: ThetaPair, nu):
        """F(nu) = int_shell |e^{-i theta.x} int u nu dalpha - 1|^2 dx."""
        x = self.grid.points
        e = np.exp(-1j * (x @ pair.theta.components))
        inner = self.u @ (self.in_quad.weights * nu)
        return float(np.sum(self.grid.weights * np.abs(e * inner - 1.0) ** 2))


@dataclass(frozen=True)
class NuSolution:
    nu: np.ndarray
    F: float
    d_estimate: float
    accepted: bool
    failed: bool
    F_zero: float
    regularization: float
    diagnostics: dict = field(default_factory=dict)


def _ridge_solve(Mmat, target, lam_rel, lam_abs=None):
    U, s, Vh = np.linalg.svd(Mmat, full_matrices=False)
    lam = lam_abs if lam_abs is not None else lam_rel * s[0] ** 2
    filt = s / (s**2 + lam)
    mu = Vh.conj().T @ (filt * (U.conj().T @ target))
    return mu, lam, s


def minimize_F(problem: ShellProblem, pair: ThetaPair, regularization=1e-10, d_const=None, absolute=False) -> NuSolution:
    """Regularized least-squares minimizer of F(nu) over nu at the incoming nodes.

    ``regularization`` is relative to the largest eigenvalue of the normal
    matrix unless ``absolute``.  The acceptance test F <= 2 d(theta) uses
    ``d(theta) = d_const / |theta|``; without ``d_const`` the constant is
    calibrated from the zero-potential problem at the same theta.
    """
    Mmat, sw = problem.design(pair)
    target = sw.astype(complex)
    mu, lam, s = _ridge_solve(Mmat, target, None if absolute else regularization, regularization if absolute else None)
    nu = mu / np.sqrt(problem.in_quad.weights)
    F = problem.functional(pair, nu)
    F_zero = float(np.sum(problem.grid.weights))
    if d_const is None:
        d_const = calibrate_d_constant(problem, pair, regularization, absolute)
    d_est = d_const / pair.magnitude
    # F_zero is the residual of nu = 0; keeping more than half of it means the
    # plane wave was not synthesized at all, whatever the calibrated bound says
    failed = (not np.isfinite(F)) or F > 10 * d_est or F > SYNTHESIS_FLOOR * F_zero
    accepted = (F <= 2 * d_est) and not failed
    diag = {"sigma_max": float(s[0]), "sigma_min": float(s[-1]), "lambda": float(lam), "nu_norm": float(np.linalg.norm(mu))}
    return NuSolution(nu, F, d_est, bool(accepted), bool(failed), F_zero, float(lam), diag)


def calibrate_d_constant(problem: ShellProblem, pair: ThetaPair, regularization=1e-10, absolute=False):
    """c0 with d(theta) ~ c0 / |theta|, fit on the zero-potential problem at this theta."""
    zero = ShellProblem(problem.shell, problem.grid, problem.in_quad, np.exp(1j * (problem.grid.points @ problem.in_quad.nodes.T)))
    Mmat, sw = zero.design(pair)
    mu, _, _ = _ridge_solve(Mmat, sw.astype(complex), None if absolute else regularization, regularization if absolute else None)
    F0 = zero.functional(pair, mu / np.sqrt(problem.in_quad.weights))
    return max(F0, 1e-300) * pair.magnitude


def fourier_estimate(continued: ContinuedAmplitude, nu: NuSolution, in_quad: SphereQuadrature):
    """-4 pi int A(theta', alpha) nu(alpha) dalpha."""
    return complex(-4 * math.pi * np.sum(in_quad.weights * continued.values * nu.nu))


# ---------------------------------------------------------------------------
# Full reconstruction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InversionParams:
    b0: float
    b1: float | None = None
    b2: float | None = None
    r_param: float = 8.0
    xi_max: float = 1.9
    n_xi: int = 9
    ell_max: int | None = None
    regularization: float = 1e-10
    shell_nr: int = 6
    shell_degree: int | None = None
    grid_n: int = 16
    tail_tol: float = 1e-3

    def shell(self):
        b1 = self.b1 if self.b1 is not None else 1.1 * self.b0
        b2 = self.b2 if self.b2 is not None else 1.5 * self.b0
        return ShellSpec(self.b0, b1, b2)


@dataclass(frozen=True)
class XiRecord:
    xi: np.ndarray
    estimate: complex
    F: float
    theta_norm: float
    accepted: bool
    failed: bool


@dataclass(frozen=True)
class Reconstruction:
    density: object
    records: list
    clamped_fraction: float
    status: str

    @property
    def acceptance_rate(self):
        if not self.records:
            return 1.0
        return float(np.mean([r.accepted for r in self.records]))

    @property
    def failure_rate(self):
        if not self.records:
            return 0.0
        return float(np.mean([r.failed for r in self.records]))


def xi_grid(xi_max, n):
    """Cubic lattice of frequencies with |xi| <= xi_max, spacing 2 xi_max / (n - 1).

    Returns (nodes, weights); weights are the cell volumes (dxi^3).
    """
    c = np.linspace(-xi_max, xi_max, n)
    X = np.stack(np.meshgrid(c, c, c, indexing="ij"), -1).reshape(-1, 3)
    keep = np.linalg.norm(X, axis=-1) <= xi_max + 1e-12
    d = c[1] - c[0]
    return X[keep], np.full(int(keep.sum()), d**3)


def radial_potential_transform(q_func, b0, xi, n_quad=200):
    """int_{|x|<b0} q(|x|) e^{-i xi.x} dx for a radial q by radial quadrature."""
    xi = np.atleast_2d(xi)
    t, w = np.polynomial.legendre.leggauss(n_quad)
    r = 0.5 * b0 * (t + 1)
    w = 0.5 * b0 * w
    s = np.linalg.norm(xi, axis=-1)[:, None]
    kern = np.sinc(s * r / math.pi)
    return (kern * (4 * math.pi * r**2 * q_func(r) * w)).sum(axis=-1)


def estimate_transform(table: AmplitudeTable, xi_nodes, params: InversionParams, coeffs=None, problem=None):
    """(q + C)-transform estimates at the given frequencies, in the k = 1 frame."""
    tab = table.at_unit_wavenumber()
    if coeffs is None:
        L = params.ell_max if params.ell_max is not None else tab.out_quad.degree // 2
        coeffs = multipole_expand(tab, L)
    if problem is None:
        problem = ShellProblem.build(coeffs, params.shell(), params.shell_nr, params.shell_degree)
    records = []
    d_cache = {}
    for xi in np.atleast_2d(xi_nodes):
        t = float(np.linalg.norm(xi))
        if t == 0:
            # xi = 0: any theta = theta' on the quadric; use the pair for a tiny xi along e3
            xi_eff = np.array([0.0, 0.0, 1e-9])
        else:
            xi_eff = xi
        r_par = max(params.r_param, theta_lower_bound(np.linalg.norm(xi_eff)))
        pair = make_theta_pair(xi_eff, r_par)
        cont = amplitude_at_complex_direction(coeffs, pair.theta_prime.components, params.tail_tol, check=False)
        key = round(t, 6)
        nu = minimize_F(problem, pair, params.regularization, d_const=d_cache.get(key))
        d_cache.setdefault(key, nu.d_estimate * pair.magnitude)
        est = fourier_estimate(cont, nu, tab.in_quad)
        records.append(XiRecord(np.asarray(xi, float), est, nu.F, pair.magnitude, nu.accepted, nu.failed))
    return records, coeffs, problem


def reconstruct_density(table: AmplitudeTable, medium, params: InversionParams, xi_nodes=None, xi_weights=None):
    """Recover C on a ball grid from the total amplitude of q + C.

    The known host transform is subtracted, the remainder is inverted by direct
    quadrature over the frequency lattice, and negative values are clamped.
    """
    from .homogenized import CapacitanceDensityField

    k = table.k
    b0_1 = params.b0 * k
    p1 = replace(
        params,
        b0=b0_1,
        b1=None if params.b1 is None else params.b1 * k,
        b2=None if params.b2 is None else params.b2 * k,
    )
    if xi_nodes is None:
        xi_nodes, xi_weights = xi_grid(params.xi_max, params.n_xi)
    records, _, _ = estimate_transform(table, xi_nodes, p1)
    est = np.array([r.estimate for r in records])
    if medium is not None and not medium.is_vacuum:
        from .background import potential_q

        def q1(r):
            x = np.zeros((len(r), 3))
            x[:, 2] = r / k
            return potential_q(medium, x) / k**2

        est = est - radial_potential_transform(q1, b0_1, xi_nodes)
    grid1 = build_ball_grid(b0_1, params.grid_n)
    phase = np.exp(1j * grid1.points @ np.asarray(xi_nodes).T)
    vals = (phase @ (est * xi_weights)).real / (2 * math.pi) ** 3
    total_pos = vals[vals > 0] @ grid1.weights[vals > 0] if np.any(vals > 0) else 0.0
    neg_mass = -vals[vals < 0] @ grid1.weights[vals < 0] if np.any(vals < 0) else 0.0
    denom = total_pos + neg_mass
    clamped = float(neg_mass / denom) if denom > 0 else 0.0
    vals = np.maximum(vals, 0.0)
    # back to physical units: C(x) = k^2 C_1(k x)
    grid = build_ball_grid(params.b0, params.grid_n)
    density = CapacitanceDensityField(grid, vals * k**2)
    status = "ok"
    if clamped > 0.25:
        status = "reconstruction unreliable"
        logger.warning("clamped %.1f%% of the recovered mass", 100 * clamped)
    return Reconstruction(density, records, clamped, status)
