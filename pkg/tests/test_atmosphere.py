import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from turbsim._util import ConfigError, ValidityWarning
from turbsim.atmosphere import (Cn2Profile, OpticalConfig, cn2_hufnagel_valley, cn2_slcd,
                                fried_parameter, isoplanatic_angle, kolmogorov_psd,
                                layer_phase_structure_function, le_otf, lucky_probability,
                                phase_structure_function, refractive_structure_function, se_otf,
                                von_karman_psd)
from turbsim.optics import diffraction_otf_circular

REF = OpticalConfig(525e-9, 0.2034, 7000.0, Cn2Profile.constant(1e-15), "spherical")


def fried_closed_form(lam, L, c, spherical):
    """Constant profile: ∫ weight = L (plane) or 3L/8 (spherical)."""
    k = 2 * math.pi / lam
    integral = c * L * (3 / 8 if spherical else 1.0)
    return 0.185 * (4 * math.pi ** 2 / (k * k * integral)) ** 0.6


# ---------------------------------------------------------------------- PSDs

def test_kolmogorov_values():
    assert math.isclose(kolmogorov_psd(1.0, 1e-16), 3.3e-18, rel_tol=1e-12)
    assert math.isclose(kolmogorov_psd(2.0, 1e-15) / kolmogorov_psd(1.0, 1e-15), 2 ** (-11 / 3))
    with pytest.raises(ValueError):
        kolmogorov_psd(0.0, 1e-15)


def test_von_karman_finite_at_zero_and_cut_off():
    assert np.isfinite(von_karman_psd(0.0, 1e-15, 10.0, 0.01))
    km = 5.92 / 0.01
    k = 10 * km
    r = von_karman_psd(k, 1e-15, 1e6, 0.01) / kolmogorov_psd(k, 1e-15)
    assert r < 1e-40 and math.isclose(r, math.exp(-100), rel_tol=1e-6)


# ------------------------------------------------------------------ profiles

def test_slcd_table():
    assert cn2_slcd(10.0) == 0.0
    assert math.isclose(cn2_slcd(100.0), 4.008e-13 * 100 ** -1.054)
    assert cn2_slcd(500.0) == 1.3e-15


def test_hufnagel_valley_ground():
    assert math.isclose(cn2_hufnagel_valley(0.0), 2.7e-16 + 1.7e-14)


def test_tabulated_profile_validation():
    with pytest.raises(ConfigError):
        Cn2Profile.tabulated([0, 2, 1], [1e-15, 1e-15, 1e-15])
    with pytest.raises(ConfigError):
        Cn2Profile.tabulated([0, 1], [1e-15, -1e-15])


def test_tabulated_trapezoid_richardson():
    # smooth profile sampled on n and 2n knots: trapezoid error drops ~4x
    L = 1000.0
    f = lambda z: 1e-15 * np.exp(-z / 300.0)
    exact = 1e-15 * 300 * (1 - math.exp(-L / 300))
    errs = []
    for n in (11, 21, 41):
        z = np.linspace(0, L, n)
        errs.append(abs(Cn2Profile.tabulated(z, f(z)).integrate(L) - exact))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


# ----------------------------------------------------------------- Fried r0

def test_worked_example():
    assert abs(REF.r0 - 0.0478) < 2e-4
    assert abs(REF.D_over_r0 - 4.26) < 0.02
    assert math.isclose(REF.r0, fried_closed_form(525e-9, 7000, 1e-15, True), rel_tol=1e-9)


def test_spherical_plane_ratio():
    ratio = REF.r0 / REF.with_(wave_kind="plane").r0
    assert abs(ratio - (8 / 3) ** 0.6) < 1e-6


def test_halving_cn2_scales_r0():
    half = REF.with_(profile=Cn2Profile.constant(5e-16))
    assert math.isclose(half.r0 / REF.r0, 2 ** 0.6, rel_tol=1e-9)


def test_doubling_L_plane():
    p = REF.with_(wave_kind="plane")
    assert math.isclose(p.with_(L=14000.0).r0 / p.r0, 2 ** -0.6, rel_tol=1e-12)


def test_zero_turbulence_is_infinite():
    assert math.isinf(REF.with_(profile=Cn2Profile.constant(0.0)).r0)
    assert math.isinf(isoplanatic_angle(REF.with_(profile=Cn2Profile.constant(0.0))))


def test_hufnagel_valley_quadrature_matches_independent_rule():
    cfg = REF.with_(profile=Cn2Profile("hufnagel_valley"), L=1000.0, wave_kind="plane")
    z = np.linspace(0, 1000.0, 200001)
    ref = integrate.simpson(cn2_hufnagel_valley(z), x=z)
    k = 2 * math.pi / cfg.wavelength
    r0 = 0.185 * (4 * math.pi ** 2 / (k * k * ref)) ** 0.6
    assert math.isclose(fried_parameter(cfg), r0, rel_tol=1e-7)


# ---------------------------------------------------------------- θ0

def test_isoplanatic_angle_pinned_and_closed_form():
    closed = 58.1e-3 * 525e-9 ** 1.2 * (1e-15 * 3 / 8 * 7000 ** (8 / 3)) ** -0.6
    assert math.isclose(isoplanatic_angle(REF), closed, rel_tol=1e-8)
    assert math.isclose(isoplanatic_angle(REF), 2.14680042e-06, rel_tol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.floats(300e-9, 2e-6), st.floats(1e-17, 1e-13))
def test_isoplanatic_scalings(lam, c):
    a = REF.with_(wavelength=lam, profile=Cn2Profile.constant(c))
    b = a.with_(wavelength=2 * lam)
    assert math.isclose(isoplanatic_angle(b) / isoplanatic_angle(a), 2 ** 1.2, rel_tol=1e-9)
    d = a.with_(profile=Cn2Profile.constant(2 * c))
    assert math.isclose(isoplanatic_angle(d) / isoplanatic_angle(a), 2 ** -0.6, rel_tol=1e-9)


# ------------------------------------------------------ structure functions

def test_structure_functions():
    assert phase_structure_function(0.05, 0.05) == pytest.approx(6.88)
    assert phase_structure_function(0.0, 0.05) == 0.0
    assert refractive_structure_function(8.0, 1e-15) == pytest.approx(4e-15)


def test_layer_form_matches_r0_form():
    p = REF.with_(wave_kind="plane")
    r = np.linspace(0.01, 0.5, 20)
    a = layer_phase_structure_function(r, p.k, p.L, 1e-15)
    b = phase_structure_function(r, p.r0)
    assert np.max(np.abs(a / b - 1)) < 0.005


# ---------------------------------------------------------------------- OTFs

def test_le_otf_values():
    lam, z, r0 = 525e-9, 7000.0, 0.05
    f = r0 / (lam * z)
    assert math.isclose(le_otf(f, lam, z, r0), math.exp(-3.44))
    assert abs(le_otf(f, lam, z, r0) - 0.0321) < 1e-4
    assert le_otf(0.0, lam, z, r0) == 1.0 and se_otf(0.0, lam, z, r0, 0.2) == 1.0
    fs = np.linspace(0, 3 * f, 50)
    assert np.all(np.diff(le_otf(fs, lam, z, r0)) < 0)


def test_se_factor_half_at_D_over_8():
    lam, z, D = 525e-9, 7000.0, 0.2
    f = D / 8 / (lam * z)
    for r0 in (0.02, 0.05, 0.1):
        le = le_otf(f, lam, z, r0)
        assert math.isclose(math.log(se_otf(f, lam, z, r0, D)), 0.5 * math.log(le), rel_tol=1e-12)


def test_se_clamped_above_D():
    lam, z, D = 525e-9, 7000.0, 0.2
    with pytest.warns(ValidityWarning):
        v = se_otf(2 * D / (lam * z), lam, z, 0.05, D)
    assert v == 1.0


def test_average_otf_factorization():
    lam, z, D, r0 = 525e-9, 7000.0, 0.2, 0.05
    f = np.linspace(0, D / (lam * z), 30)
    fc = D / (lam * z) / 2
    composed = diffraction_otf_circular(f, fc) * le_otf(f, lam, z, r0)
    direct = np.array([diffraction_otf_circular(x, fc) * math.exp(-3.44 * (lam * z * x / r0) ** (5 / 3))
                       for x in f])
    assert np.allclose(composed, direct, rtol=1e-14, atol=0)
    assert np.all((composed >= 0) & (composed <= 1))


# -------------------------------------------------------------------- lucky

def test_lucky_probability_formula_and_monotone():
    for x in (3.5, 4.0, 5.0, 6.0):
        assert math.isclose(lucky_probability(x), 5.6 * math.exp(-0.1557 * x * x), rel_tol=1e-15)
    assert lucky_probability(5.0) < lucky_probability(4.0)


def test_lucky_probability_flags_out_of_validity():
    with pytest.warns(ValidityWarning):
        v = lucky_probability(2.0)
    assert v > 0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lucky_probability(3.5)
