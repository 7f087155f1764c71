import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from turbsim._util import AliasingWarning, ConfigError
from turbsim.optics import (ComplexField, atf_from_asf, coherent_image, convolve,
                            diffraction_otf_circular, fresnel_kernel, incoherent_image, make_pupil,
                            otf_from_psf, propagate, psf_from_phase, radial_profile, rs_oracle,
                            sv_convolve_gather, sv_convolve_scatter)


# ------------------------------------------------------------------ pupils

def test_circle_4x4_has_12_samples():
    assert make_pupil("circle", 4, 4).mask.sum() == 12


def test_square_full_support():
    assert np.all(make_pupil("square", 8, 8).mask == 1)


def test_unit_disk_is_single_sample():
    m = make_pupil("circle", 8, 1).mask
    assert m.sum() == 1 and m[4, 4] == 1


@pytest.mark.parametrize("d", [0, 9])
def test_pupil_diameter_bounds(d):
    with pytest.raises(ConfigError):
        make_pupil("circle", 8, d)


def test_circle_pupil_symmetric():
    m = make_pupil("circle", 64, 32).mask        # even disk: centred between samples
    assert np.array_equal(m, m.T) and np.array_equal(m, m[::-1]) and np.array_equal(m, m[:, ::-1])
    m = make_pupil("circle", 64, 31).mask        # odd disk: centred on sample N//2
    core = m[1:, 1:]
    assert np.array_equal(core, core.T) and np.array_equal(core, core[::-1])
    assert np.array_equal(core, core[:, ::-1])


# --------------------------------------------------------------------- PSFs

def test_airy_first_zero():
    N, d, q = 64, 32, 2
    k = psf_from_phase(make_pupil("circle", N, d), np.zeros((N, N)), q)
    c = q * N // 2
    # first zero of (2 J1(x)/x)² at x = 3.8317 ↔ radius 3.8317/π · qN/d grid units
    r0 = special.jn_zeros(1, 1)[0] / np.pi * q * N / d
    prof = k[c, c:c + 10]
    assert abs(int(np.argmin(prof[:7])) - r0) < 0.5
    assert prof[int(round(r0))] < 1e-3 * prof[0]


def test_square_pupil_separable_sinc2():
    N, d, q = 32, 16, 2
    k = psf_from_phase(make_pupil("square", N, d), np.zeros((N, N)), q)
    M = q * N
    u = (np.arange(M) - M // 2) / M
    # DFT of a length-d box: |sin(π d u)/sin(π u)|², normalized
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(u == 0, d, np.sin(np.pi * d * u) / np.sin(np.pi * u)) ** 2
    ref = np.outer(s, s)
    assert np.allclose(k, ref / ref.sum(), atol=1e-14)


def test_psf_unit_sum_nonnegative():
    rng = np.random.default_rng(0)
    k = psf_from_phase(make_pupil("circle", 32, 20), rng.normal(0, 1, (32, 32)), 2)
    assert k.min() >= 0 and abs(k.sum() - 1) < 1e-12


@settings(max_examples=25, deadline=None)
@given(ay=st.integers(-5, 5), ax=st.integers(-5, 5))
def test_linear_ramp_shifts_psf(ay, ax):
    N, d, q = 32, 16, 2
    M = q * N
    p = make_pupil("circle", N, d)
    y, x = np.indices((N, N))
    # ramp of α cycles per M samples moves the PSF by α pixels
    ramp = 2 * np.pi * (ay * y + ax * x) / M
    k0 = psf_from_phase(p, np.zeros((N, N)), q)
    k1 = psf_from_phase(p, ramp, q)
    a0 = np.unravel_index(np.argmax(k0), k0.shape)
    a1 = np.unravel_index(np.argmax(k1), k1.shape)
    assert (a1[0] - a0[0], a1[1] - a0[1]) == (ay, ax)
    back = np.roll(k1, (-ay, -ax), axis=(0, 1))
    assert np.sqrt(np.mean((back - k0) ** 2)) < 1e-6


def test_oversample_must_be_integer_ge1():
    p = make_pupil("circle", 8, 8)
    with pytest.raises(ConfigError):
        psf_from_phase(p, np.zeros((8, 8)), 0)


# ------------------------------------------------------------ propagation

def test_fresnel_kernel_modulus_and_phase():
    lam, z, dx = 500e-9, 10.0, 1e-4
    h = fresnel_kernel(64, dx, z, lam).data
    assert np.allclose(np.abs(h), 1 / (lam * z))
    kz = 2 * np.pi * z / lam
    assert abs(np.angle(h[32, 32] * np.exp(-1j * (kz - np.pi / 2)))) < 1e-6
    h2 = fresnel_kernel(64, dx, 2 * z, lam).data
    assert np.allclose(np.abs(h2), np.abs(h) / 2)


def test_fresnel_kernel_needs_positive_z():
    with pytest.raises(ValueError):
        fresnel_kernel(16, 1e-3, 0.0, 5e-7)


def test_plane_wave_is_eigenfunction():
    f = ComplexField(np.ones((64, 64)), 1e-3, 500e-9)
    out = propagate(f, 5.0)
    ratio = out.data / f.data
    assert np.allclose(ratio, ratio[0, 0])
    assert abs(abs(ratio[0, 0]) - 1) < 1e-12


def test_angular_spectrum_round_trip_and_energy():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    u = np.fft.ifft2(np.fft.fft2(u) * (np.hypot(*np.meshgrid(np.fft.fftfreq(64), np.fft.fftfreq(64))) < 0.2))
    f = ComplexField(u, 2e-5, 500e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AliasingWarning)
        g = propagate(f, 0.05)
        back = propagate(g, -0.05)
    assert abs(g.energy() / f.energy() - 1) < 1e-6
    assert np.sqrt(np.mean(np.abs(back.data - u) ** 2)) < 1e-8


def test_point_source_matches_fresnel_kernel():
    N, lam, z = 256, 500e-9, 2.0
    dx = np.sqrt(lam * z / N)            # critical sampling: both methods equivalent
    u = np.zeros((N, N), complex)
    u[N // 2, N // 2] = 1 / dx ** 2
    out = propagate(ComplexField(u, dx, lam), z, "fresnel_conv")
    h = fresnel_kernel(N, dx, z, lam).data
    c = slice(N // 2 - 20, N // 2 + 20)
    assert np.allclose(out.data[c, c], h[c, c], rtol=1e-8, atol=1e-8 * np.abs(h).max())


def test_aliasing_flag():
    f = ComplexField(np.ones((16, 16)), 1e-6, 500e-9)
    with pytest.warns(AliasingWarning):
        out = propagate(f, 100.0)
    assert out.aliasing_warning


def test_rs_point_source_decay():
    u = np.zeros((16, 16), complex)
    u[8, 8] = 1.0
    f = ComplexField(u, 1e-3, 500e-9)
    a, b = np.abs(rs_oracle(f, 10.0, [(0, 0)])), np.abs(rs_oracle(f, 20.0, [(0, 0)]))
    assert abs(a / b - 2.0) < 1e-9


def test_rs_paraxial_limit_matches_fresnel():
    lam, dx, z = 500e-9, 1e-4, 50.0
    u = np.zeros((16, 16), complex)
    u[8, 8] = 1 / dx ** 2
    f = ComplexField(u, dx, lam)
    pts = [(1e-3, 0.0), (0.0, 2e-3)]
    rs = rs_oracle(f, z, pts)
    k = 2 * np.pi / lam
    fr = np.array([np.exp(1j * k * z) / (1j * lam * z) * np.exp(1j * k * (x * x + y * y) / (2 * z))
                   for x, y in pts])
    assert np.max(np.abs(rs - fr) / np.abs(fr)) < 0.01


def test_rs_square_aperture_fraunhofer():
    lam, N, dx = 500e-9, 64, 1e-4
    w = 16
    u = np.zeros((N, N), complex)
    u[N // 2 - w // 2:N // 2 + w // 2, N // 2 - w // 2:N // 2 + w // 2] = 1.0
    f = ComplexField(u, dx, lam)
    D = w * dx
    z = 20 * D * D / lam
    xs = np.linspace(-1, 1, 41) * lam * z / D
    val = np.abs(rs_oracle(f, z, [(x, 0.0) for x in xs])) ** 2
    ref = np.sinc(D * xs / (lam * z)) ** 2
    val = val / val[20]
    assert np.sqrt(np.mean((val - ref) ** 2)) < 0.03


def test_rs_refuses_large_grids():
    f = ComplexField(np.zeros((512, 512)), 1e-3, 5e-7)
    with pytest.raises(ConfigError):
        rs_oracle(f, 1.0, [(0, 0)])


# ---------------------------------------------------------------- imaging

def test_incoherent_identity_and_dc():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(20, 20))
    delta = np.zeros((5, 5))
    delta[2, 2] = 1
    assert np.allclose(incoherent_image(delta, img), img)
    k = rng.uniform(size=(5, 5))
    k /= k.sum()
    out = incoherent_image(k, np.full((20, 20), 3.0), boundary="replicate")
    assert np.allclose(out, 3.0)


def test_coherent_differs_from_incoherent_for_antiphase_pair():
    field = np.zeros((9, 9), complex)
    field[4, 3], field[4, 5] = 1.0, -1.0
    asf = np.ones((3, 3)) / 9
    coh = coherent_image(asf, field)
    inc = incoherent_image(np.abs(asf) ** 2 / np.sum(np.abs(asf) ** 2), np.abs(field) ** 2)
    # the midpoint sees both sources: they cancel coherently and add incoherently
    assert coh[4, 4] < 1e-20 and inc[4, 4] > 0.1


# -------------------------------------------------------------------- OTFs

def test_circular_otf_values():
    assert diffraction_otf_circular(0.0, 1.0) == 1.0
    assert diffraction_otf_circular(2.0, 1.0) == 0.0
    expect = (2 / np.pi) * (np.arccos(0.5) - 0.5 * np.sqrt(0.75))
    assert abs(diffraction_otf_circular(1.0, 1.0) - expect) < 1e-15
    assert abs(expect - 0.3910) < 1e-4
    f = np.linspace(0, 2, 200)
    assert np.all(np.diff(diffraction_otf_circular(f, 1.0)) <= 0)
    with pytest.raises(ValueError):
        diffraction_otf_circular(-0.1, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_otf_unit_at_zero(seed):
    psf = np.random.default_rng(seed).uniform(size=(16, 16))
    H = otf_from_psf(psf / psf.sum())
    assert abs(H[8, 8] - 1) < 1e-12


def test_atf_normalized():
    asf = np.random.default_rng(3).normal(size=(8, 8)) + 0.5
    assert abs(atf_from_asf(asf)[4, 4] - 1) < 1e-12


def test_empirical_circular_otf_matches_closed_form():
    N, d, q = 128, 64, 2
    k = psf_from_phase(make_pupil("circle", N, d), np.zeros((N, N)), q)
    H = np.abs(radial_profile(np.abs(otf_from_psf(k))))
    lags = np.arange(d + 1)
    th = diffraction_otf_circular(lags / d, 0.5)
    assert np.sqrt(np.mean((H[:d + 1] - th) ** 2)) < 0.02


# ------------------------------------------------------- SV convolution

def _rand_kernels(rng, H, W, K=3):
    k = rng.uniform(size=(H, W, K, K))
    return k / k.sum(axis=(-2, -1), keepdims=True)


def test_delta_scatter_and_gather():
    rng = np.random.default_rng(4)
    ks = _rand_kernels(rng, 9, 9)
    img = np.zeros((9, 9))
    img[4, 4] = 1
    s = sv_convolve_scatter(img, ks)
    g = sv_convolve_gather(img, ks)
    # scatter: h_u(x - u) with u = (4, 4)
    assert np.allclose(s[3:6, 3:6], ks[4, 4])
    # gather: h_x(x - u) at each x
    for a in range(3):
        for b in range(3):
            x = (3 + a, 3 + b)
            assert np.isclose(g[x], ks[x][a, b])


def test_invariant_provider_collapses_to_convolution():
    rng = np.random.default_rng(5)
    img = rng.uniform(size=(12, 10))
    k = rng.uniform(size=(5, 5))
    ref = convolve(img, k)
    assert np.allclose(sv_convolve_scatter(img, k), ref)
    assert np.allclose(sv_convolve_gather(img, k), ref)
    assert np.allclose(sv_convolve_scatter(img, lambda r, c: k), ref)


def test_two_pixel_brute_force():
    rng = np.random.default_rng(6)
    img = np.zeros((7, 7))
    img[2, 3], img[4, 3] = 0.7, 1.3
    k1, k2 = rng.uniform(size=(3, 3)), rng.uniform(size=(3, 3))

    def prov(r, c):
        return k1 if r < 3 else k2

    ref_s = np.zeros((7, 7))
    ref_s[1:4, 2:5] += 0.7 * k1
    ref_s[3:6, 2:5] += 1.3 * k2
    assert np.allclose(sv_convolve_scatter(img, prov), ref_s)
    ref_g = np.zeros((7, 7))
    for y in range(7):
        for x in range(7):
            h = prov(y, x)
            for (uy, ux), v in (((2, 3), 0.7), ((4, 3), 1.3)):
                a, b = y - uy + 1, x - ux + 1
                if 0 <= a < 3 and 0 <= b < 3:
                    ref_g[y, x] += v * h[a, b]
    assert np.allclose(sv_convolve_gather(img, prov), ref_g)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3))
def test_scatter_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    ks = _rand_kernels(rng, 8, 8)
    J1, J2 = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    lhs = sv_convolve_scatter(a * J1 + b * J2, ks)
    rhs = a * sv_convolve_scatter(J1, ks) + b * sv_convolve_scatter(J2, ks)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_scatter_conserves_mass_with_room():
    rng = np.random.default_rng(7)
    img = np.zeros((12, 12))
    img[3:9, 3:9] = rng.uniform(size=(6, 6))
    assert np.isclose(sv_convolve_scatter(img, _rand_kernels(rng, 12, 12)).sum(), img.sum())
