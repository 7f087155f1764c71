import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbsim._util import ClippingWarning
from turbsim.optics import make_pupil, psf_from_phase
from turbsim.zernike import (NollMatrix, _factor, noll_covariance, noll_index, noll_matrix,
                             noll_unindex, phase_from_coeffs, project, sample_intermodal,
                             tilt_to_pixels, zernike_eval, zernike_xy)


def covariance_oracle(ni, nj, m, x):
    """Intermodal covariance through math.lgamma (independent of scipy)."""
    sign = (-1) ** ((ni + nj - 2 * m) // 2)
    lg = (math.lgamma((ni + nj - 5 / 3) / 2) - math.lgamma((ni + nj + 23 / 3) / 2)
          - math.lgamma((nj - ni + 17 / 3) / 2) - math.lgamma((ni - nj + 17 / 3) / 2))
    return 2.2698 * sign * math.sqrt((ni + 1) * (nj + 1)) * math.exp(lg) * x ** (5 / 3)


# ------------------------------------------------------------------ indexing

def test_low_order_table():
    t = noll_unindex(2)
    assert (t.n, t.m, t.parity) == (1, 1, "cos")
    t = noll_unindex(3)
    assert (t.n, t.m, t.parity) == (1, 1, "sin")
    t = noll_unindex(4)
    assert (t.n, t.m, t.parity) == (2, 0, "m0")
    assert [(noll_unindex(j).n, noll_unindex(j).m) for j in range(5, 12)] == [
        (2, 2), (2, 2), (3, 1), (3, 1), (3, 3), (3, 3), (4, 0)]


def test_index_bijection():
    seen = set()
    for j in range(1, 101):
        t = noll_unindex(j)
        assert noll_index(t.n, t.m, t.parity) == j
        seen.add((t.n, t.m, t.parity))
    assert len(seen) == 100


def test_index_errors():
    with pytest.raises(ValueError):
        noll_index(3, 2)
    with pytest.raises(ValueError):
        noll_index(2, 0, "cos")
    with pytest.raises(ValueError):
        noll_unindex(0)


# ---------------------------------------------------------------- evaluation

def test_values():
    assert zernike_eval(2, 1.0, 0.0) == pytest.approx(2.0)
    assert zernike_eval(3, 1.0, math.pi / 2) == pytest.approx(2.0)
    for r in (0.0, 0.3, 0.8):
        assert zernike_eval(4, r, 1.1) == pytest.approx(math.sqrt(3) * (2 * r * r - 1))
    assert zernike_eval(4, 1 / math.sqrt(2), 0.0) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        zernike_eval(4, 1.01, 0.0)


def test_orthonormality_by_polar_quadrature():
    # Gauss-Legendre in ρ², uniform in θ: exact for polynomials of this degree
    xr, wr = np.polynomial.legendre.leggauss(20)
    rho = np.sqrt((xr + 1) / 2)
    wr = wr / 2                                   # dρ² measure on [0, 1]
    th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    R, T = np.meshgrid(rho, th, indexing="ij")
    w = wr[:, None] * (2 * np.pi / 40) / 2         # ρ dρ dθ = dρ²/2 dθ
    Z = np.stack([zernike_eval(j, R, T) for j in range(1, 16)])
    G = np.einsum("iab,jab,ab->ij", Z, Z, w) / math.pi
    assert np.max(np.abs(G - np.eye(15))) < 1e-3


# ----------------------------------------------------------------- synthesis

def test_tilt_plane_gradient():
    N, d = 64, 40
    phi = phase_from_coeffs(np.eye(3)[1], N, d)
    c = N // 2
    # inside the disk the x-tilt plane rises by 2 per pupil radius
    grad = (phi[c, c + 5] - phi[c, c - 5]) / 10
    assert grad == pytest.approx(2 / (d / 2), rel=1e-9)
    assert np.all(phase_from_coeffs(np.zeros(10), N, d) == 0)


def test_projection_round_trip():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(36)
    a[0] = 0.0
    b = project(phase_from_coeffs(a, 256, 256), 36, 256)
    assert np.max(np.abs(a - b)) < 1e-6


def test_tilt_moves_psf_argmax():
    N, d = 64, 32
    pupil = make_pupil("circle", N, d)
    shifts = []
    # 4·a·N/(π·d) pixels at twofold oversampling: two pixels per π/4
    for c in (0.0, math.pi / 4, math.pi / 2):
        phase = phase_from_coeffs(np.array([0.0, c, 0.0]), N, d)
        psf = psf_from_phase(pupil, phase)
        shifts.append(np.unravel_index(np.argmax(psf), psf.shape)[1])
    steps = np.diff(shifts)
    assert abs(steps[0]) == 2 and steps[0] == steps[1]


# ---------------------------------------------------------------- covariance

def test_covariance_rules_and_values():
    assert noll_covariance(2, 3, 2.0) == 0.0
    assert noll_covariance(2, 4, 2.0) == 0.0                # m differs
    assert noll_covariance(4, 11, 1.0) == 0.0               # i - j odd
    assert noll_covariance(4, 11, 1.0, parity_rule=False) < 0
    assert noll_covariance(2, 2, 1.0) == pytest.approx(covariance_oracle(1, 1, 1, 1.0), rel=1e-10)
    assert noll_covariance(4, 4, 1.0) == pytest.approx(covariance_oracle(2, 2, 0, 1.0), rel=1e-10)
    assert noll_covariance(2, 8, 1.0) == pytest.approx(covariance_oracle(1, 3, 1, 1.0), rel=1e-10)
    # the classical tilt figure is 0.448; the closed form gives 0.4536
    assert abs(noll_covariance(2, 2, 1.0) - 0.448) < 0.006
    with pytest.raises(ValueError):
        noll_covariance(1, 2, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.floats(0.1, 20.0))
def test_covariance_scaling(i, j, x):
    assert noll_covariance(i, j, x) == pytest.approx(noll_covariance(i, j, 1.0) * x ** (5 / 3),
                                                     rel=1e-12, abs=1e-300)


def test_matrix_symmetric_psd():
    S = noll_matrix(36, 1.0)
    assert np.allclose(S.sigma, S.sigma.T)
    assert np.linalg.eigvalsh(S.sigma).min() > -1e-10
    assert not S.clipped
    assert np.allclose(S.chol @ S.chol.T, S.sigma)


def test_factor_clips_indefinite():
    S = np.zeros((3, 3))
    S[1:, 1:] = [[1.0, 2.0], [2.0, 1.0]]
    with pytest.warns(ClippingWarning):
        L, clipped = _factor(S)
    assert clipped
    assert np.linalg.eigvalsh(L @ L.T).min() > -1e-12


def test_white_sampling():
    eye = NollMatrix(np.diag([0.0] + [1.0] * 4), np.diag([0.0] + [1.0] * 4))
    a = sample_intermodal(eye, 5, size=100_000)
    C = np.cov(a[:, 1:].T)
    assert np.max(np.abs(C - np.eye(4))) < 0.05
    assert np.all(a[:, 0] == 0)


def test_noll_sampling_variance_and_determinism():
    S = noll_matrix(10, 1.0)
    a = sample_intermodal(S, 8, size=100_000)
    assert a[:, 1].var() == pytest.approx(S.sigma[1, 1], rel=0.03)
    assert abs(np.corrcoef(a[:, 1], a[:, 2])[0, 1]) < 0.02
    assert np.array_equal(a, sample_intermodal(S, 8, size=100_000))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_tilt_to_pixels(a, b):
    assert tilt_to_pixels(math.pi / 4) == pytest.approx(1.0)
    assert tilt_to_pixels(0.0) == 0.0
    assert tilt_to_pixels(a + b) == pytest.approx(tilt_to_pixels(a) + tilt_to_pixels(b), abs=1e-9)


def test_cartesian_matches_polar():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        x, y = 0.3, -0.4
        for j in (5, 9, 14):
            assert zernike_xy(j, x, y) == pytest.approx(zernike_eval(j, 0.5, math.atan2(y, x)))
