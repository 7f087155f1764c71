"""Random phase screens: FFT synthesis, subharmonics, Voelz sampling and
empirical structure functions."""

from dataclasses import dataclass, replace

import numpy as np

from ._util import ConfigError, is_pow2, stream


@dataclass(frozen=True)
class ScreenSpec:
    """Phase-screen statistics.

    r0 is the screen's own (plane-wave) Fried parameter; L0 = inf selects the
    Kolmogorov spectrum, finite L0 / l0 select von Karman.
    """

    r0: float
    L0: float = np.inf
    l0: float = 0.0

    @property
    def kind(self):
        return "kolmogorov" if np.isinf(self.L0) and self.l0 == 0 else "von_karman"


@dataclass
class PhaseScreen:
    phase: np.ndarray
    dx: float
    r0_effective: float
    seed: int = 0
    index: tuple = ()


def voelz_spacing(wavelength, L, D, s=4.0):
    if s < 4:
        raise ConfigError("Voelz criterion needs s >= 4")
    return wavelength * L / (s * D)


def phase_psd(f, spec):
    """Phase PSD in cycles/m: 0.023 r0^(-5/3) f^(-11/3) (von Karman optional).

    Equal to 2π k² L times the refractive-index PSD, written in f = k/2π.
    """
    f = np.asarray(f, dtype=float)
    f0 = 0.0 if np.isinf(spec.L0) else 1.0 / spec.L0
    with np.errstate(divide="ignore"):
        psd = 0.023 * spec.r0 ** (-5.0 / 3.0) * (f * f + f0 * f0) ** (-11.0 / 6.0)
    if spec.l0 > 0:
        fm = 5.92 / spec.l0 / (2 * np.pi)
        psd = psd * np.exp(-(f / fm) ** 2)
    return psd


def sample_screen_fft(N, dx, spec, seed, index=()):
    """Zero-mean Gaussian screen with the target PSD on the FFT lattice.

    Real white noise is transformed so the spectrum is exactly Hermitian and
    the inverse FFT is real; the DC bin is zeroed.
    """
    if not is_pow2(N):
        raise ConfigError("screen size must be a power of two")
    index = tuple(index)
    rng = stream(seed, "screens.fft", *index)
    df = 1.0 / (N * dx)
    fy = np.fft.fftfreq(N, dx)
    fx = np.fft.rfftfreq(N, dx)
    fr = np.hypot(fx[None, :], fy[:, None])
    amp = np.sqrt(phase_psd(np.where(fr == 0, 1.0, fr), spec)) * df
    amp[0, 0] = 0.0
    # spectrum of real white noise: Hermitian with unit-variance bins
    w = np.fft.rfft2(rng.standard_normal((N, N))) / N
    phs = np.fft.irfft2(w * amp, (N, N)) * N * N
    return PhaseScreen(phs, dx, spec.r0, seed, index)


_GX, _GW = np.polynomial.legendre.leggauss(16)


def _cell_mean_psd(fx, fy, width, spec):
    """Average of the phase PSD over a square frequency cell (Gauss rule)."""
    X = fx + _GX[:, None] * width / 2
    Y = fy + _GX[None, :] * width / 2
    return float(np.sum(_GW[:, None] * _GW[None, :] * phase_psd(np.hypot(X, Y), spec)) / 4)


def add_subharmonics(screen, levels=3, spec=None):
    """Add low-frequency content from 3×3 sub-lattices at Δf/3^p, p = 1..levels.

    Each of the eight non-DC cells gets a complex Gaussian amplitude whose
    variance is the PSD averaged over the cell (not sampled at its centre:
    the f^(-11/3) law is steep enough near DC that centre sampling leaves
    the large-separation structure function ~30% low). spec defaults to a
    Kolmogorov spectrum with the screen's r0.
    """
    if levels < 0:
        raise ConfigError("levels must be >= 0")
    if levels == 0:
        return screen
    spec = spec or ScreenSpec(screen.r0_effective)
    N, dx = screen.phase.shape[0], screen.dx
    rng = stream(screen.seed, "screens.subharmonics", *screen.index)
    x = (np.arange(N) - N // 2) * dx
    Df = 1.0 / (N * dx)
    lo = np.zeros((N, N))
    for p in range(1, levels + 1):
        df = Df / 3 ** p
        cn = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        amp = np.array([[np.sqrt(_cell_mean_psd(b * df, a * df, df, spec)) * df
                         for b in (-1, 0, 1)] for a in (-1, 0, 1)])
        amp[1, 1] = 0.0
        E = np.exp(2j * np.pi * df * np.outer(x, [-1, 0, 1]))   # N×3
        lo += (E @ (cn * amp) @ E.T).real
    lo -= lo.mean()
    return replace(screen, phase=screen.phase + lo)


def make_screen(N, dx, spec, seed, index=(), subharmonic_levels=3):
    return add_subharmonics(sample_screen_fft(N, dx, spec, seed, index), subharmonic_levels, spec)


@dataclass
class StructureFunction:
    r: np.ndarray          # bin centres [m]
    D: np.ndarray          # binned estimate
    counts: np.ndarray     # lag-pair counts per bin (all screens)
    lag_map: np.ndarray    # 2-D estimate over lags, zero lag at the centre
    dx: float


def empirical_structure_function(screens, max_lag=None):
    """Isotropic empirical structure function averaged over pixels and screens.

    For every integer lag Δ the sum of (φ(x+Δ) - φ(x))² over all in-grid
    pairs is formed exactly through zero-padded FFT correlations
    (Σ w·φ²(x+Δ) + Σ φ²(x)·w - 2 Σ φ(x)φ(x+Δ)), accumulated over screens in
    the spectral domain. Radial bins collect lags with round(|Δ|) = r and are
    weighted by pair counts, so a ramp φ = g·x gives g²·<Δx²> over the ring.
    """
    acc = ns = None
    for s in screens:              # any iterable: a generator keeps one screen in memory
        phi = s.phase
        if acc is None:
            N, dx = phi.shape[0], s.dx
            P = 2 * N
            Wh = np.fft.rfft2(np.ones((N, N)), (P, P))
            acc, ns = np.zeros_like(Wh), 0
        A = np.fft.rfft2(phi * phi, (P, P))
        F = np.fft.rfft2(phi, (P, P))
        acc += np.conj(Wh) * A + np.conj(A) * Wh - 2 * np.abs(F) ** 2
        ns += 1
    if ns is None or ns < 2:
        raise ConfigError("need at least two screens")
    num = np.fft.fftshift(np.fft.irfft2(acc, (P, P)))
    cnt = np.fft.fftshift(np.rint(np.fft.irfft2(np.abs(Wh) ** 2, (P, P))))
    with np.errstate(invalid="ignore", divide="ignore"):
        lag_map = np.where(cnt > 0, num / (cnt * ns), np.nan)
    c = P // 2
    yy, xx = np.indices((P, P))
    rr = np.rint(np.hypot(yy - c, xx - c)).astype(int)
    rmax = (N - 1) if max_lag is None else int(max_lag)
    keep = (rr <= rmax) & (cnt > 0)
    tot = np.bincount(rr[keep], weights=num[keep], minlength=rmax + 1)
    pairs = np.bincount(rr[keep], weights=cnt[keep], minlength=rmax + 1) * ns
    D = tot / np.maximum(pairs, 1)
    return StructureFunction(np.arange(rmax + 1) * dx, D, pairs, lag_map, dx)
