"""The twelve acceptance checks as functions returning uniform result records.

Sample sizes come from a level: "full" uses the published sizes, "fast"
smaller ensembles for a quick report. Thresholds never depend on the level.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import verify
from ._util import ValidityWarning, stream
from .atmosphere import Cn2Profile, OpticalConfig, lucky_probability, phase_structure_function
from .psfbasis import (BasisConfig, PsfBasis, approx_sv_convolve, fit_pca, generate_psf_dataset,
                       reconstruct)
from .optics import sv_convolve_scatter
from .pipeline import zernike_frame
from .restore import (DeconvConfig, TiltMap, blind_deconvolve, blur_matrix, deconv_objective,
                      kernel_correlation, lucky_rate, psnr, tilt_matrix, turbulence_matrix)
from .scenes import natural_scene
from .screens import ScreenSpec, empirical_structure_function, make_screen
from .splitstep import grid_pixels, make_plan, object_pixels_to_u, propagate_points
from .zernike import noll_matrix

SIZES = {
    "fast": {"screens": 100, "screen_N": 256, "trials": 100, "tilt_fields": 4000},
    "full": {"screens": 2000, "screen_N": 512, "trials": 500, "tilt_fields": 20000},
}


@dataclass
class Criterion:
    number: int
    name: str
    status: str                 # "pass" | "fail" | "skip"
    metric: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0
    curves: dict = field(default_factory=dict)     # name -> (header, columns)
    images: dict = field(default_factory=dict)     # name -> 2-D array

    @property
    def passed(self):
        return self.status == "pass"

    def line(self):
        return (f"criterion {self.number:2d} {self.status.upper():4s} {self.name}: "
                f"metric {self.metric:.4g} (limit {self.threshold:.4g}) {self.detail}".rstrip())


def reference_optics():
    """Constant Cn² = 1e-15, λ = 525 nm, L = 7 km, D = 0.2034 m, spherical wave."""
    return OpticalConfig(525e-9, 0.2034, 7000.0, Cn2Profile.constant(1e-15), "spherical", 128)


def _timed(fn):
    def run(*a, **kw):
        t = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _status(ok):
    return "pass" if ok else "fail"


@_timed
def fried_example():
    cfg = reference_optics()
    r0, dr0 = cfg.r0, cfg.D_over_r0
    err = max(abs(r0 - 0.0478) / 0.0002, abs(dr0 - 4.26) / 0.02)
    return Criterion(1, "Fried parameter example", _status(err <= 1), err, 1.0,
                     f"r0 = {r0:.5f} m, D/r0 = {dr0:.4f}")


@_timed
def wave_ratio():
    cfg = reference_optics()
    ratio = cfg.r0 / cfg.with_(wave_kind="plane").r0
    err = abs(ratio - (8 / 3) ** 0.6)
    return Criterion(2, "spherical/plane r0 ratio", _status(err <= 1e-6), err, 1e-6,
                     f"ratio = {ratio:.8f}")


@_timed
def screen_statistics(cfg, count, N=512, seed=0, levels=3):
    if not np.isfinite(cfg.r0):
        return Criterion(3, "phase-screen structure function", "skip", 0.0, 0.15, "no turbulence")
    dx = cfg.grid_dx
    spec = ScreenSpec(cfg.r0)
    sf = empirical_structure_function(
        (make_screen(N, dx, spec, seed, (i,), levels) for i in range(count)),
        max_lag=N // 4)
    k = np.arange(4, N // 4 + 1)
    r, emp = sf.r[k], sf.D[k]
    th = phase_structure_function(r, cfg.r0)
    dev = float(np.max(np.abs(emp / th - 1)))
    slope = float(np.polyfit(np.log(r), np.log(emp), 1)[0])
    ok = dev <= 0.15 and abs(slope - 5 / 3) <= 0.1
    return Criterion(3, "phase-screen structure function", _status(ok), dev, 0.15,
                     f"slope {slope:.4f}, {count} screens N={N}",
                     curves={"structure": (["r_m", "empirical", "theory"], [r, emp, th])})


def _otf_criteria(cfg, trials, seed=0):
    ens = verify.exposure_ensemble(cfg, trials, seed)
    out = []
    if not np.isfinite(cfg.r0):
        c = verify.otf_check(cfg, ens, "vacuum", 0.02)
        out.append(Criterion(4, "vacuum OTF", _status(c.passed), c.metric, 0.02, f"{trials} trials",
                             curves={"otf_vacuum": (["f", "empirical", "theory"], [c.x, c.empirical, c.theory])}))
        out[0].images = {"psf_vacuum": ens.le_psf}
        return out, ens
    for n, kind, thr in ((4, "long", 0.08), (5, "short", 0.10)):
        c = verify.otf_check(cfg, ens, kind, thr)
        out.append(Criterion(n, f"{kind}-exposure OTF", _status(c.passed), c.metric, thr,
                             f"relative RMS {c.extra['rms_rel']:.4f}, {trials} trials",
                             curves={f"otf_{kind}": (["f_cyc_per_m", "empirical", "theory"],
                                                     [c.x, c.empirical, c.theory])}))
    out[0].images = {"psf_long": ens.le_psf, "psf_short": ens.se_psf}
    return out, ens


def exposure_otfs(cfg, trials, seed=0):
    """Criteria 4 and 5 from one ensemble (one vacuum check when r0 is infinite)."""
    t = time.perf_counter()
    res, ens = _otf_criteria(cfg, trials, seed)
    for r in res:
        r.seconds = (time.perf_counter() - t) / len(res)
    return res, ens


@_timed
def tilt_statistics(cfg, count, seed=0):
    if not np.isfinite(cfg.r0):
        return Criterion(6, "tilt statistics", "skip", 0.0, 0.05, "no turbulence")
    c = verify.tilt_check(cfg, count, seed=seed)
    sig = c.extra["identity_sigmas"]
    ok = c.passed and sig <= 4.0
    curves = {}
    for j, (z, zt, d, dt, rz, rd) in c.extra["curves"].items():
        curves[f"tilt_mode{j}"] = (["lag_px", "ztilt", "ztilt_theory", "dtilt", "dtilt_theory"],
                                   [c.x, z, zt, d, dt])
    return Criterion(6, "tilt statistics", _status(ok), c.metric, 0.05,
                     f"identity {sig:.2f} SE (limit 4), {count} fields", curves=curves)


@_timed
def kernel_crosscheck():
    rows, (num0, noll0, e0) = verify.kernel_crosscheck(reference_optics())
    worst = max(r[3] for r in rows)
    ok = worst <= 0.03 and e0 <= 0.02
    det = ", ".join(f"s={s}: {e:.2%}" for s, _, _, e in rows) + f", s=0 vs Noll {e0:.2%}"
    return Criterion(7, "correlation kernel cross-check", _status(ok), worst, 0.03, det)


@_timed
def operator_order(seed=0):
    shape = (4, 4)
    rng = stream(seed, "verify.operator")
    k = rng.uniform(0.0, 1.0, (4, 4, 3, 3))
    k /= k.sum(axis=(-2, -1), keepdims=True)
    tilt = TiltMap.uniform(shape, 0, 1)
    Hm = turbulence_matrix(shape, tilt, k)
    T, B = tilt_matrix(shape, tilt), blur_matrix(shape, k)
    exact = float(np.max(np.abs(Hm - B @ T)))
    gap = float(np.max(np.abs(Hm - T @ B)))
    ok = exact == 0.0 and gap > 1e-3
    return Criterion(8, "tilt-then-blur operator order", _status(ok), exact, 0.0,
                     f"|H - TB|max = {gap:.4f}")


def small_basis(K=15, M=20, count=400, dr0=(0.0, 4.0), seed=0):
    return fit_pca(generate_psf_dataset(BasisConfig(K=K), count, dr0, seed), M)


@_timed
def scattering_exactness(seed=0, basis=None):
    b = basis or small_basis()
    rng = stream(seed, "verify.scatter")
    img = rng.uniform(0, 1, (32, 32))
    beta = rng.standard_normal((32, 32, b.M)) * b.sigma
    fast = approx_sv_convolve(img, beta, b)
    brute = sv_convolve_scatter(img, reconstruct(beta, b))
    err = verify.rms_abs(fast, brute)
    return Criterion(9, "scattering-form exactness", _status(err <= 1e-10), err, 1e-10, "32x32")


PINNED_LUCKY = {3.5: 0.8316, 4.0: 0.4640}


@_timed
def lucky_curve(count=20000, tau=1.0, seed=0):
    """Formula vs an independent scalar evaluation, the pinned values, and MC monotonicity.

    The pinned values sit 1.3e-4 and 2.6e-4 from the formula with the 0.1557
    constant, so the pinned sub-check cannot pass; the detail reports both.
    """
    xs = np.array(sorted(PINNED_LUCKY))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        p = lucky_probability(xs)
    oracle = np.array([5.6 * math.exp(-0.1557 * x * x) for x in xs])
    formula_err = float(np.max(np.abs(p - oracle)))
    pin_err = float(max(abs(pi - PINNED_LUCKY[x]) for x, pi in zip(xs, p)))
    rates = [lucky_rate(noll_matrix(36, x), tau, count, seed) for x in (2.0, 3.5, 5.0)]
    mono = rates[0] > rates[1] > rates[2]
    ok = formula_err <= 1e-12 and pin_err <= 1e-4 and mono
    return Criterion(10, "lucky probability", _status(ok), pin_err, 1e-4,
                     f"p(3.5)={p[0]:.5f} p(4)={p[1]:.5f} vs pinned 0.8316/0.4640; "
                     f"formula error {formula_err:.1e}; MC rates "
                     f"{', '.join(f'{r:.4f}' for r in rates)} (monotone={mono})")


def deconv_benchmark(seed=0):
    """Synthetic blur-recovery case: PCA basis over D/r0 in [2, 4], truth drawn at D/r0 in [2, 3]."""
    bc = BasisConfig(K=15)
    basis = fit_pca(generate_psf_dataset(bc, 2000, (2.0, 4.0), seed=0), 30)
    truth = generate_psf_dataset(bc, 1, (2.0, 3.0), seed=11).psfs[0]
    J = natural_scene(96, 96, 3)
    noise = stream(seed, "verify.deconv_noise").normal(0, 1e-3, J.shape)
    I = signal.fftconvolve(J, truth, mode="same") + noise
    return basis, truth, J, I


@_timed
def restoration_suite(seed=0):
    # identity kernel: mean = δ, so w = 0 reproduces the input exactly
    K = 5
    delta = np.zeros((K, K))
    delta[K // 2, K // 2] = 1.0
    phi = np.zeros((1, K, K))
    phi[0, 0, 0] = 1.0
    ident = PsfBasis(phi, delta, np.ones(1), np.ones(1))
    I = natural_scene(32, 32, seed)
    r = blind_deconvolve(I, ident, DeconvConfig(lam=0.0, gamma=1e-6, outer=5))
    fixed = verify.rms_abs(r.J, I)

    basis, truth, J, I = deconv_benchmark(seed)
    cfg = DeconvConfig(lam=1e-4, gamma=1e-8, j_iters=100)
    res = blind_deconvolve(I, basis, cfg)
    obj = np.asarray(res.objective)
    mono = bool(np.all(np.diff(obj) <= cfg.slack))
    corr = kernel_correlation(res.kernel, truth)
    c = slice(10, -10)
    gain = psnr(res.J[c, c], J[c, c]) - psnr(I[c, c], J[c, c])
    final = deconv_objective(I, res.J, res.w, basis, cfg)
    ok = fixed <= 1e-6 and mono and corr >= 0.95 and gain >= 2.0 and np.isclose(final, obj[-1])
    return Criterion(11, "restoration properties", _status(ok), fixed, 1e-6,
                     f"monotone={mono}, kernel corr {corr:.3f}, PSNR gain {gain:.2f} dB")


@_timed
def performance(size=256, sample_stride=8, seed=0, basis=None):
    """Zernike frame at size² vs per-pixel split-step (M = 10), the latter timed on a
    pixel subset and scaled to size² kernels.

    Kernel tables and embedding spectra are precomputed assets, so one
    untimed warm-up frame builds them before the timed frame.
    """
    cfg = reference_optics()
    b = basis or small_basis(K=33, M=100, count=2000, dr0=(0.0, 5.0))
    img = natural_scene(size, size, seed)
    zernike_frame(img, cfg, b, seed, frame=1)
    t = time.perf_counter()
    zernike_frame(img, cfg, b, seed)
    tz = time.perf_counter() - t
    pix = grid_pixels((size, size), sample_stride)
    us = object_pixels_to_u(cfg, pix, (size, size))
    t = time.perf_counter()
    plan = make_plan(cfg, M=10, seed=seed, point_grid=[tuple(u) for u in us])
    for s in range(0, len(us), 64):
        propagate_points(plan, us[s:s + 64])
    ts = (time.perf_counter() - t) * (size * size) / len(us)
    speed = ts / tz
    return Criterion(12, "propagation-free speed-up", _status(speed >= 20), speed, 20.0,
                     f"zernike {tz:.2f} s, split-step ≈ {ts:.0f} s (from {len(us)} points)")


def run_all(cfg=None, level="fast", seed=0, include=None):
    """All criteria at `level`; cfg supplies the optics for criteria 3–6."""
    cfg = cfg or reference_optics()
    sz = SIZES[level]
    want = set(include or range(1, 13))
    out = []
    if 1 in want:
        out.append(fried_example())
    if 2 in want:
        out.append(wave_ratio())
    if 3 in want:
        out.append(screen_statistics(cfg, sz["screens"], sz["screen_N"], seed))
    if want & {4, 5}:
        out.extend(exposure_otfs(cfg, sz["trials"], seed)[0])
    if 6 in want:
        out.append(tilt_statistics(cfg, sz["tilt_fields"], seed))
    if 7 in want:
        out.append(kernel_crosscheck())
    if 8 in want:
        out.append(operator_order(seed))
    if 9 in want:
        out.append(scattering_exactness(seed))
    if 10 in want:
        out.append(lucky_curve(seed=seed))
    if 11 in want:
        out.append(restoration_suite(seed))
    if 12 in want:
        if level == "full":
            out.append(performance(seed=seed))
        else:
            out.append(Criterion(12, "propagation-free speed-up", "skip", 0.0, 20.0, "full level only"))
    return out
