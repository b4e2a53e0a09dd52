import math

import numpy as np
import pytest
from scipy import special


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def penetrable_sphere_amplitude(k, kin, R, cosg, ell_max=60):
    """Far-field amplitude of a homogeneous sphere (interior wavenumber ``kin``).

    Independent oracle built from scipy: u = e^{ik alpha.x} + A e^{ikr}/r, with
    A = sum (2l+1) t_l / (ik) P_l(cos gamma).
    """
    ells = np.arange(ell_max + 1)
    ka, qa = k * R, kin * R
    j, jp = special.spherical_jn(ells, ka), special.spherical_jn(ells, ka, derivative=True)
    y, yp = special.spherical_yn(ells, ka), special.spherical_yn(ells, ka, derivative=True)
    ji, jip = special.spherical_jn(ells, qa), special.spherical_jn(ells, qa, derivative=True)
    h, hp = j + 1j * y, jp + 1j * yp
    t = -(k * jp * ji - kin * j * jip) / (k * hp * ji - kin * h * jip)
    P = np.array([special.eval_legendre(ell, cosg) for ell in ells])
    return np.tensordot((2 * ells + 1) * t / (1j * k), P, axes=(0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
