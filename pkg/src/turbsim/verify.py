"""Statistical checks of the simulators against closed-form theory.

Each check returns a small result object with the curves it compared and a
scalar metric, so the CLI report, the acceptance suite and the scripts share
one implementation.
"""

from dataclasses import dataclass, field

import numpy as np

from . import atmosphere as atm
from .optics import diffraction_otf_circular, otf_from_psf, radial_profile
from .splitstep import make_plan, propagate_points, psf_from_aperture_field
from .zfield import (_axis_slice, dtilt_stat, dtilt_theory, midpoint_dr0, sample_field_wss, spatial_corr_numeric,
                     tilt_correlation, tilt_kernel, ztilt_stat, ztilt_theory)
from .zernike import noll_covariance


@dataclass
class CurveCheck:
    name: str
    x: np.ndarray
    empirical: np.ndarray
    theory: np.ndarray
    metric: float
    threshold: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.metric <= self.threshold)


def rms_abs(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def rms_rel(a, b):
    return rms_abs(a, b) / float(np.sqrt(np.mean(np.asarray(b) ** 2)))


# ------------------------------------------------------------ exposure OTFs

@dataclass
class Ensemble:
    le_psf: np.ndarray
    se_psf: np.ndarray
    trials: int
    d: int          # pupil diameter in grid samples
    dx: float       # aperture-plane grid spacing [m]


def exposure_ensemble(cfg, trials, seed=0, M=10, subharmonic_levels=3, zero_screens=False):
    """Average on-axis split-step PSFs over independent trials, with and without tilt removal."""
    le = se = 0.0
    plan = None
    for t in range(trials):
        plan = make_plan(cfg, M=M, seed=seed, trial=t, subharmonic_levels=subharmonic_levels,
                         zero_screens=zero_screens)
        U = propagate_points(plan, [(0.0, 0.0)])
        le = le + psf_from_aperture_field(plan, U)[0]
        se = se + psf_from_aperture_field(plan, U, recenter=True)[0]
    return Ensemble(le / trials, se / trials, trials, plan.diameter_samples, plan.dx)


def radial_otf(psf, d):
    """Radial |OTF| at integer pupil lags 0..d (lag k ↔ λLf = k·dx)."""
    return np.abs(radial_profile(np.abs(otf_from_psf(psf))))[:d + 1]


def otf_check(cfg, ens, kind, threshold):
    """Empirical radial OTF vs ℋ_diff·ℋ_atm over lags below D.

    The metric is the RMS difference in OTF units (OTF(0) = 1); the
    relative RMS (normalized by the theory curve) is reported alongside.
    """
    d, dx = ens.d, ens.dx
    lag = np.arange(d + 1) * dx                    # λ L f [m]
    f = lag / (cfg.wavelength * cfg.L)
    diff = diffraction_otf_circular(lag / (d * dx), 0.5)
    if kind == "long":
        atmo = atm.le_otf(f, cfg.wavelength, cfg.L, cfg.r0) if np.isfinite(cfg.r0) else np.ones_like(f)
        psf = ens.le_psf
    elif kind == "short":
        atmo = atm.se_otf(f, cfg.wavelength, cfg.L, cfg.r0, cfg.D) if np.isfinite(cfg.r0) else np.ones_like(f)
        psf = ens.se_psf
    elif kind == "vacuum":
        atmo = np.ones_like(f)
        psf = ens.le_psf
    else:
        raise ValueError(kind)
    th = diff * atmo
    emp = radial_otf(psf, d)
    m = lag < d * dx
    return CurveCheck(f"{kind}_otf", f[m], emp[m], th[m], rms_abs(emp[m], th[m]), threshold,
                      {"rms_rel": rms_rel(emp[m], th[m]), "trials": ens.trials})


# ------------------------------------------------------------ tilt fields

def tilt_check(cfg, count, H=16, W=64, seed=0, max_lag=32, threshold=0.05, pad=4):
    """Z-tilt / D-tilt statistics of sampled tilt fields (both modes, lags along x).

    Fields are drawn with the closed-form tilt kernel at D/r0 of the config
    and converted to pixels; the metric is the worst relative RMS over the
    four curves. The worst D-tilt identity deviation, in standard errors, is
    reported as `identity_sigmas`.
    """
    spp = cfg.pixel_pitch / cfg.D
    dr0 = cfg.D_over_r0
    lags = np.arange(max_lag + 1)
    out = {}
    worst = 0.0
    ident = 0.0
    for j in (2, 3):
        f = sample_field_wss(tilt_kernel(j, dr0), H, W, spp, seed, (j,), pad, count).field * (4 / np.pi)
        z = ztilt_stat(f, max_lag, axis=1)
        d = dtilt_stat(f, max_lag, axis=1)
        zt = ztilt_theory(lags, spp, dr0, j)
        dt = dtilt_theory(lags, spp, dr0, j)
        rz, rd = rms_rel(z, zt), rms_rel(d[1:], dt[1:])
        worst = max(worst, rz, rd)
        ident = max(ident, identity_sigmas(f, max_lag))
        out[j] = (z, zt, d, dt, rz, rd)
    return CurveCheck("tilt", lags, np.stack([out[2][0], out[3][0]]), np.stack([out[2][1], out[3][1]]),
                      worst, threshold, {"curves": out, "identity_sigmas": ident, "count": count})


def identity_sigmas(fields, max_lag, axis=1):
    """Largest |mean_i g_i(s)| / SE over lags, g_i = D_i(s) - 2(Z_i(0) - Z_i(s)) per field.

    Both sides have the same expectation for a stationary field; the
    per-field differences come only from the edge pixels each estimator
    uses, so their spread is the estimator noise of the identity.
    """
    f = np.asarray(fields, float)
    n = f.shape[axis + 1]
    ax = tuple(range(1, f.ndim))
    z0 = np.mean(f * f, axis=ax)
    worst = 0.0
    for lag in range(1, max_lag + 1):
        a = f[_axis_slice(axis + 1, 0, n - lag)]
        b = f[_axis_slice(axis + 1, lag, n)]
        g = np.mean((a - b) ** 2, axis=ax) - 2 * (z0 - np.mean(a * b, axis=ax))
        se = g.std(ddof=1) / np.sqrt(len(g))
        m = abs(g.mean())
        worst = max(worst, m / se if se > 0 else (0.0 if m < 1e-12 else np.inf))
    return float(worst)


# ------------------------------------------------------ kernel cross-checks

def kernel_crosscheck(cfg, seps=(0.5, 1.0, 2.0)):
    """Double-disk tilt correlation vs the Bessel-integral closed form, and s = 0 vs Noll."""
    dr0_mid = midpoint_dr0(cfg)
    dr0_plane = cfg.with_(wave_kind="plane").D_over_r0
    rows = []
    for s in seps:
        num = spatial_corr_numeric(2, 2, (s, 0.0), cfg)
        cf = tilt_correlation(2, s, 0.0, dr0_plane)
        rows.append((s, num, cf, abs(num / cf - 1)))
    num0 = spatial_corr_numeric(2, 2, (0.0, 0.0), cfg)
    noll0 = noll_covariance(2, 2, dr0_mid)
    return rows, (num0, noll0, abs(num0 / noll0 - 1))
