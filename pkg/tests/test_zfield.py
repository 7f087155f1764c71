import math
import warnings

import numpy as np
import pytest
from scipy import integrate, special

from turbsim._util import ClippingWarning, ConfigError
from turbsim.atmosphere import Cn2Profile, OpticalConfig
from turbsim.zernike import noll_covariance, noll_matrix
from turbsim.zfield import (CorrelationKernel, double_disk, dtilt_stat, dtilt_theory,
                            exact_path_corr, midpoint_dr0, mode_kernel, sample_field_wss,
                            sample_zernike_space, spatial_corr_numeric, tilt_correlation,
                            tilt_integrals_vectorized, tilt_kernel, tilt_kernel_integrals,
                            ztilt_stat, ztilt_theory)
from turbsim.verify import identity_sigmas

CFG = OpticalConfig(525e-9, 0.2034, 7000.0, Cn2Profile.constant(1e-15), "spherical")
SPP = CFG.pixel_pitch / CFG.D
FAST = dict(n_r=24, n_t=24)


def white_kernel():
    return CorrelationKernel((0, 0), lambda sy, sx: np.where((sy == 0) & (sx == 0), 1.0, 0.0), 1.0)


# ------------------------------------------------------------ Bessel integrals

def test_i2_vanishes_at_zero_and_i0_decreases():
    i0, i2 = tilt_kernel_integrals(0.0)
    assert i2 == 0.0 and i0 > 0
    s = np.linspace(0, 4, 41)
    a, _ = tilt_integrals_vectorized(s)
    assert np.all(np.diff(a) < 0)


def test_two_quadrature_routes_agree():
    s = np.array([0.0, 0.3, 1.0, 2.5])
    q0, q2 = tilt_kernel_integrals(s)
    v0, v2 = tilt_integrals_vectorized(s)
    assert np.allclose(q0, v0, rtol=1e-6)
    assert np.allclose(q2[1:], v2[1:], rtol=1e-6)


def test_i0_at_one_against_log_substitution():
    # third route: ζ = e^t substitution, plain adaptive quadrature
    def g(t):
        z = math.exp(t)
        return z * z ** (-14 / 3) * special.j0(2 * z) * special.jv(2, z) ** 2
    pieces = np.log([1e-8, 1e-2, 1.0, 4.0, 16.0, 64.0, 1e3])
    ref = sum(integrate.quad(g, a, b, epsrel=1e-11, epsabs=0, limit=400)[0]
              for a, b in zip(pieces[:-1], pieces[1:]))
    assert tilt_kernel_integrals(1.0, epsrel=1e-10)[0] == pytest.approx(ref, rel=1e-8)


# ------------------------------------------------------------- tilt kernels

def test_tilt_correlation_symmetries():
    v2 = tilt_correlation(2, 0.0, 0.3, 2.0)
    assert v2 == pytest.approx(tilt_correlation(3, 0.0, 1.1, 2.0))
    assert tilt_correlation(2, 0.7, math.pi / 4, 2.0) == pytest.approx(
        tilt_correlation(3, 0.7, math.pi / 4, 2.0))
    for psi in (0.0, 0.4, 1.3):
        assert tilt_correlation(2, 0.9, psi, 1.5) == pytest.approx(
            tilt_correlation(3, 0.9, psi + math.pi / 2, 1.5))
    assert tilt_correlation(2, 1.0, 0.0, 1.0, exact=True) == pytest.approx(
        tilt_correlation(2, 1.0, 0.0, 1.0), rel=1e-6)
    with pytest.raises(ValueError):
        tilt_correlation(4, 0.0, 0.0, 1.0)


def test_normalized_kernel_bounded():
    k = tilt_kernel(2).normalized()
    s = np.linspace(0, 4, 50)
    v = k(np.zeros_like(s), s)
    assert v[0] == pytest.approx(1.0) and np.all(np.abs(v) <= 1 + 1e-12)


# -------------------------------------------------------- double-disk routes

def test_double_disk_odd_pair_vanishes():
    assert abs(double_disk(2, 3, [0.7, 0.0], **FAST)) < 1e-12
    assert abs(double_disk(2, 3, [0.7, 0.0], method="qmc", qmc_log2=12)) < 1e-2


def test_double_disk_zero_separation_is_noll():
    assert double_disk(2, 2, [0.0, 0.0]) == pytest.approx(noll_covariance(2, 2, 1.0), rel=0.02)
    assert double_disk(4, 4, [0.0, 0.0]) == pytest.approx(noll_covariance(4, 4, 1.0), rel=0.02)


def test_double_disk_matches_closed_form_tilt():
    plane = CFG.with_(wave_kind="plane").D_over_r0
    for s in (0.5, 1.0, 2.0):
        num = spatial_corr_numeric(2, 2, (s, 0.0), CFG)
        assert num == pytest.approx(tilt_correlation(2, s, 0.0, plane), rel=0.03)


def test_quadrature_methods_agree():
    t = double_disk(5, 5, [0.4, 0.2])
    q = double_disk(5, 5, [0.4, 0.2], method="qmc", qmc_log2=15)
    assert q == pytest.approx(t, rel=0.03)
    with pytest.raises(ConfigError):
        double_disk(2, 2, [0, 0], method="simpson")


def test_midpoint_model_needs_constant_profile():
    with pytest.raises(ConfigError):
        midpoint_dr0(CFG.with_(profile=Cn2Profile("hufnagel_valley")))


# ------------------------------------------------------------- path integral

def test_exact_path_zero_separation():
    e0 = exact_path_corr(2, 2, [0.0, 0.0], CFG, n_z=16, **FAST)
    assert e0 == pytest.approx(noll_covariance(2, 2, CFG.D_over_r0), rel=0.03)
    # the mid-path layer weighs the path by (1/2)^(5/3) L instead of 3L/8
    m0 = spatial_corr_numeric(2, 2, (0.0, 0.0), CFG, **FAST)
    assert e0 / m0 == pytest.approx(3 / 8 * 2 ** (5 / 3), rel=5e-3)


def test_exact_path_decays_slower_than_midpoint():
    s = np.array([[0.0, 0.0], [0.1, 0.0], [0.5, 0.0], [1.0, 0.0]])
    e = exact_path_corr(2, 2, s, CFG, n_z=16, **FAST)
    m = spatial_corr_numeric(2, 2, s, CFG, **FAST)
    e, m = e / e[0], m / m[0]
    assert abs(e[1] - m[1]) < 0.01
    assert np.all(np.diff(e) < 0) and np.all(e[1:] > m[1:])


def test_exact_path_parity_rule():
    assert exact_path_corr(4, 11, [0.3, 0.0], CFG) == 0.0


# ------------------------------------------------------------- field sampling

def test_white_field_is_uncorrelated():
    f = sample_field_wss(white_kernel(), 64, 64, 0.1, seed=1, count=250).field
    assert f.size >= 10 ** 6
    r = np.mean(f[:, :, 1:] * f[:, :, :-1]) / np.mean(f * f)
    assert abs(r) < 0.02


def test_wss_autocovariance_matches_kernel():
    k = tilt_kernel(2).normalized()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClippingWarning)
        s = sample_field_wss(k, 32, 32, SPP, seed=2, count=2000)
    z = ztilt_stat(s.field, 8)
    for lag in (1, 8):
        assert z[lag] == pytest.approx(float(k(0.0, lag * SPP)), rel=0.1)


@pytest.mark.filterwarnings("ignore::turbsim._util.ClippingWarning")
def test_wss_determinism():
    k = tilt_kernel(3).normalized()
    a = sample_field_wss(k, 32, 32, SPP, seed=9, index=(1,)).field
    b = sample_field_wss(k, 32, 32, SPP, seed=9, index=(1,)).field
    c = sample_field_wss(k, 32, 32, SPP, seed=9, index=(2,)).field
    assert np.array_equal(a, b) and not np.allclose(a, c)


def test_higher_mode_kernel_peak():
    k = mode_kernel(4)
    assert k.variance == pytest.approx(noll_covariance(4, 4, 1.0), rel=0.02)
    v = k.normalized()(0.0, np.array([0.0, 0.5, 1.0]))
    assert v[0] == pytest.approx(1.0) and v[0] > v[1] > v[2]


def test_zernike_space_pointwise_covariance():
    n, frames = 10, 1600
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClippingWarning)
        a = np.concatenate([sample_zernike_space(CFG, n, 8, 8, 4, (t,)).a.reshape(-1, n)
                            for t in range(frames)])
    S = noll_matrix(n, CFG.D_over_r0).sigma[1:, 1:]
    C = np.cov(a[:, 1:].T)
    sd = np.sqrt(np.diag(S))
    # pixels within a frame are strongly correlated, so count frames only
    se = np.sqrt((S * S + np.outer(sd * sd, sd * sd)) / frames)
    big = np.abs(S / np.outer(sd, sd)) > 0.05
    assert np.max(np.abs(C - S)[big] / se[big]) < 4
    assert np.max(np.abs(np.diag(C) / np.diag(S) - 1)) < 4 * math.sqrt(2 / frames)
    assert abs(np.corrcoef(a[:, 1], a[:, 2])[0, 1]) < 4 / math.sqrt(frames)


def test_zernike_space_without_turbulence_is_zero():
    cfg = CFG.with_(profile=Cn2Profile.constant(0.0))
    assert not np.any(sample_zernike_space(cfg, 6, 8, 8, 0).a)


def test_tilt_statistics_identity():
    k = tilt_kernel(2).normalized()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClippingWarning)
        f = sample_field_wss(k, 16, 16, SPP, seed=3, count=400).field
    d = dtilt_stat(f, 6)
    assert d[0] == 0.0
    assert identity_sigmas(f, 6) < 4
    th = dtilt_theory(np.arange(4), SPP, 1.0)
    assert th[0] == 0.0 and np.all(np.diff(th) > 0)
    assert ztilt_theory(0, SPP, 1.0) == pytest.approx(16 / math.pi ** 2 * tilt_correlation(2, 0, 0, 1.0))
    with pytest.raises(ConfigError):
        ztilt_stat(f[:1], 3)
