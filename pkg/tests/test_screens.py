import math

import numpy as np
import pytest
from scipy import stats

from turbsim._util import ConfigError
from turbsim.screens import (PhaseScreen, ScreenSpec, add_subharmonics, empirical_structure_function,
                             make_screen, phase_psd, sample_screen_fft, voelz_spacing)

SPEC = ScreenSpec(0.05)


def kolmogorov_D(r, r0):
    return 6.88 * (np.asarray(r) / r0) ** (5 / 3)


def test_voelz_spacing():
    assert voelz_spacing(525e-9, 7000, 0.2034, 4) == pytest.approx(4.517e-3, rel=1e-3)
    assert voelz_spacing(525e-9, 7000, 0.2034, 8) == pytest.approx(4.517e-3 / 2, rel=1e-3)
    with pytest.raises(ConfigError):
        voelz_spacing(525e-9, 7000, 0.2034, 3.9)


def test_psd_law():
    f = np.array([1.0, 2.0])
    p = phase_psd(f, SPEC)
    assert p[0] == pytest.approx(0.023 * 0.05 ** (-5 / 3))
    assert p[1] / p[0] == pytest.approx(2 ** (-11 / 3))
    vk = ScreenSpec(0.05, L0=10.0)
    assert vk.kind == "von_karman" and np.isfinite(phase_psd(0.0, vk))


def test_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        sample_screen_fft(48, 0.01, SPEC, 0)


def test_deterministic_streams():
    a = sample_screen_fft(32, 0.01, SPEC, 7, (1, 2)).phase
    b = sample_screen_fft(32, 0.01, SPEC, 7, (1, 2)).phase
    c = sample_screen_fft(32, 0.01, SPEC, 7, (1, 3)).phase
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_zero_mean_over_draws():
    vals = np.array([sample_screen_fft(32, 0.01, SPEC, 3, (i,)).phase[5, 9] for i in range(400)])
    assert abs(vals.mean()) < 4 * vals.std() / math.sqrt(len(vals))


def test_periodogram_matches_psd():
    # E|FFT(φ)|² = N⁴ Δf² PSD(f) for the FFT screen
    N, dx, draws = 64, 0.01, 300
    acc = np.zeros((N, N))
    for i in range(draws):
        acc += np.abs(np.fft.fft2(sample_screen_fft(N, dx, SPEC, 11, (i,)).phase)) ** 2
    acc /= draws
    f = np.hypot(*np.meshgrid(np.fft.fftfreq(N, dx), np.fft.fftfreq(N, dx)))
    df = 1 / (N * dx)
    mid = (f > 4 * df) & (f < 16 * df)
    ratio = acc[mid].mean() / (N ** 4 * df * df * phase_psd(f[mid], SPEC)).mean()
    per_bin = acc[mid] / (N ** 4 * df * df * phase_psd(f[mid], SPEC))
    assert abs(ratio - 1) < 0.1
    assert abs(per_bin.mean() - 1) < 0.1


def test_levels_zero_is_passthrough():
    s = sample_screen_fft(32, 0.01, SPEC, 0)
    assert add_subharmonics(s, 0, SPEC) is s
    with pytest.raises(ConfigError):
        add_subharmonics(s, -1, SPEC)


def test_subharmonics_restore_large_scale_structure():
    N, dx, draws = 64, 0.01, 400
    lag = N // 4
    with_sh = [make_screen(N, dx, SPEC, 5, (i,), 3) for i in range(draws)]
    without = [make_screen(N, dx, SPEC, 5, (i,), 0) for i in range(draws)]
    target = kolmogorov_D(lag * dx, SPEC.r0)
    d_with = empirical_structure_function(with_sh, lag).D[lag]
    d_without = empirical_structure_function(without, lag).D[lag]
    assert abs(d_with / target - 1) < 0.15
    assert d_without < 0.75 * target


def test_structure_function_constant_and_ramp():
    N, dx = 16, 0.1
    const = [PhaseScreen(np.full((N, N), 2.5), dx, np.inf) for _ in range(2)]
    assert np.allclose(empirical_structure_function(const).D, 0.0, atol=1e-9)
    g = 0.7
    ramp = [PhaseScreen(g * np.arange(N)[None, :] * np.ones((N, 1)), dx, np.inf) for _ in range(2)]
    sf = empirical_structure_function(ramp, 5)
    # brute force over all lags with round(|Δ|) = r: D = g² <Δx²> weighted by pair counts
    for r in range(1, 6):
        num = den = 0.0
        for dy in range(-N + 1, N):
            for dxl in range(-N + 1, N):
                if round(math.hypot(dy, dxl)) != r:
                    continue
                pairs = (N - abs(dy)) * (N - abs(dxl))
                num += pairs * g * g * dxl * dxl
                den += pairs
        assert sf.D[r] == pytest.approx(num / den, rel=1e-9)


def test_needs_two_screens():
    with pytest.raises(ConfigError):
        empirical_structure_function([PhaseScreen(np.zeros((8, 8)), 1.0, np.inf)])
    with pytest.raises(ConfigError):
        empirical_structure_function(iter([]))


def test_streamed_screens_match_list():
    screens = [make_screen(32, 0.01, SPEC, 4, (i,)) for i in range(5)]
    a = empirical_structure_function(screens, 8)
    b = empirical_structure_function(s for s in screens)
    assert np.array_equal(a.D, b.D[:9]) and np.array_equal(a.counts, b.counts[:9])


def test_log_slope_and_gaussianity():
    N, dx = 128, 0.005
    screens = [make_screen(N, dx, SPEC, 9, (i,)) for i in range(60)]
    sf = empirical_structure_function(screens, 24)
    r = np.arange(2, 25)
    slope = np.polyfit(np.log(r), np.log(sf.D[r]), 1)[0]
    assert abs(slope - 5 / 3) < 0.1
    # small-lag increments have the same variance in every screen, so pooling is fair
    values = np.concatenate([(s.phase[:, 4::8] - s.phase[:, ::8][:, :16]).ravel() for s in screens])
    k = stats.kurtosis(values, fisher=False)
    assert 2.8 <= k <= 3.2
