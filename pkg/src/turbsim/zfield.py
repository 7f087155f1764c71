"""Zernike space: spatially correlated Zernike coefficient fields.

Separations are s = (u - u')/D with u in object-plane meters; one Nyquist
object pixel λL/(2D) is s = λL/(2D²).

Kernel normalization. K_ij(s) is the double-disk integral

    K_ij(s) = -(6.88 / 2π²) ∬ Z_i(ρ) Z_j(ρ') |(ρ - ρ')/2 + s|^(5/3) dρ dρ'

so that E[a_i(u) a_j(u')] = (D/r0)^(5/3) K_ij(s) when the path is collapsed to
a single layer at mid-path; at s = 0 it is the intermodal covariance.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft
from scipy import integrate, special
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.stats import qmc

from ._util import ClippingWarning, ConfigError, stream
from .zernike import noll_matrix, noll_unindex, zernike_xy

C2_TILT = 7.7554
_DD_CONST = 6.88 / (2 * np.pi ** 2)


# ---------------------------------------------------------------- tilt kernels

_TILT_PIECES = (1e-8, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 1e3)


def _tilt_integral(nu, s, epsrel=1e-6):
    if s == 0 and nu == 2:
        return 0.0

    def f(z):
        return z ** (-14.0 / 3.0) * special.jv(nu, 2 * s * z) * special.jv(2, z) ** 2

    # ζ = t³ on the first piece: QAGS extrapolation misjudges the ζ^(-2/3)
    # endpoint behaviour and effectively integrates from 0
    a, b = _TILT_PIECES[0] ** (1 / 3), _TILT_PIECES[1] ** (1 / 3)
    total = integrate.quad(lambda t: 3 * t * t * f(t ** 3), a, b, epsrel=epsrel, epsabs=0.0,
                           limit=200 + int(50 * s))[0]
    for a, b in zip(_TILT_PIECES[1:-1], _TILT_PIECES[2:]):
        limit = 200 + int(50 * s * (b - a))
        total += integrate.quad(f, a, b, epsrel=epsrel, epsabs=0.0, limit=limit)[0]
    return total


def tilt_kernel_integrals(s, epsrel=1e-6):
    """(I0(s), I2(s)) with I_n(s) = ∫ ζ^(-14/3) J_n(2sζ) J_2²(ζ) dζ on [1e-8, 1e3]."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    flat = s.ravel()
    i0 = np.array([_tilt_integral(0, v, epsrel) for v in flat]).reshape(s.shape)
    i2 = np.array([_tilt_integral(2, v, epsrel) for v in flat]).reshape(s.shape)
    if s.ndim == 0:
        return float(i0), float(i2)
    return i0, i2


def _composite_nodes(a, b, panels, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)[:, None]
    nodes = edges[:-1, None] + (x[None, :] + 1) / 2 * h
    return nodes.ravel(), (w[None, :] / 2 * h).ravel()


def tilt_integrals_vectorized(s):
    """I0, I2 for many s at once by a fixed composite Gauss rule.

    ζ = t³ on [1e-8, 1] removes the ζ^(-2/3) endpoint singularity; [1, 1e3]
    uses uniform panels, about two J_n(2sζ) periods per 16-node panel below
    ζ = 60 (the integrand is < 1e-10 beyond).
    """
    s = np.atleast_1d(np.asarray(s, float))
    smax = float(s.max()) if s.size else 0.0
    t, wt = _composite_nodes(1e-8 ** (1 / 3), 1.0, max(40, int(2 * smax)))
    z1, w1 = t ** 3, wt * 3 * t ** 2
    z2, w2 = _composite_nodes(1.0, 60.0, max(200, int(59 * smax / np.pi)))
    z3, w3 = _composite_nodes(60.0, 1e3, 400)
    z = np.concatenate([z1, z2, z3])
    w = np.concatenate([w1, w2, w3]) * z ** (-14.0 / 3.0) * special.jv(2, z) ** 2
    arg = 2 * s[:, None] * z[None, :]
    return special.j0(arg) @ w, special.jv(2, arg) @ w


TILT_S_MAX = 64.0


@lru_cache(maxsize=1)
def _tilt_table():
    s = np.concatenate([np.linspace(0, 2, 161), np.geomspace(2, TILT_S_MAX, 240)[1:]])
    i0, i2 = [], []
    for k in range(0, len(s), 40):
        a, b = tilt_integrals_vectorized(s[k:k + 40])
        i0.append(a)
        i2.append(b)
    i0, i2 = np.concatenate(i0), np.concatenate(i2)
    return s, CubicSpline(s, i0), CubicSpline(s, i2)


def _tilt_interp(s):
    ts, f0, f2 = _tilt_table()
    s = np.asarray(s, float)
    if np.any(s > TILT_S_MAX):
        raise ConfigError(f"separation beyond tilt table range ({TILT_S_MAX})")
    return f0(s), f2(s)


def tilt_correlation(j, s, psi0, D_over_r0, exact=False):
    """E[a_j(u) a_j(u')] for the tilts, j in {2, 3}.

    (c2 / 2^(5/3)) (D/r0)^(5/3) [I0(s) -/+ cos(2ψ0) I2(s)], minus for j = 2;
    ψ0 is the angle of u - u' from the x axis. exact=True integrates directly
    instead of interpolating the cached table.
    """
    if j not in (2, 3):
        raise ValueError("tilt modes are j = 2, 3")
    s = np.asarray(s, float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    i0, i2 = tilt_kernel_integrals(s) if exact else _tilt_interp(s)
    sign = -1.0 if j == 2 else 1.0
    out = C2_TILT / 2 ** (5.0 / 3.0) * D_over_r0 ** (5.0 / 3.0) * (i0 + sign * np.cos(2 * psi0) * i2)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------- double-disk kernels

@lru_cache(maxsize=8)
def disk_rule(n_r=48, n_t=48):
    """Tensor Gauss-Legendre (radius) × trapezoid (angle) rule on the unit disk."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = (x + 1) / 2
    wr = w / 2 * r
    t = 2 * np.pi * (np.arange(n_t) + 0.5) / n_t
    R, T = np.meshgrid(r, t, indexing="ij")
    W = np.outer(wr, np.full(n_t, 2 * np.pi / n_t))
    return (R * np.cos(T)).ravel(), (R * np.sin(T)).ravel(), W.ravel()


def _qmc_pairs(n_log2, seed=0):
    """Sobol points mapped to pairs of points uniform on the unit disk."""
    u = qmc.Sobol(4, scramble=True, seed=seed).random_base2(n_log2)
    r1, t1 = np.sqrt(u[:, 0]), 2 * np.pi * u[:, 1]
    r2, t2 = np.sqrt(u[:, 2]), 2 * np.pi * u[:, 3]
    return r1 * np.cos(t1), r1 * np.sin(t1), r2 * np.cos(t2), r2 * np.sin(t2)


def double_disk(i, j, s_vec, method="tensor", n_r=48, n_t=48, qmc_log2=16):
    """K_ij at separations s_vec (..., 2) given as (s_x, s_y) in units of D."""
    s = np.atleast_2d(np.asarray(s_vec, float))
    shape = np.asarray(s_vec).shape[:-1]
    out = np.empty(len(s))
    if method == "tensor":
        x, y, w = disk_rule(n_r, n_t)
        wi = w * zernike_xy(i, x, y)
        wj = w * zernike_xy(j, x, y)
        dx0 = (x[:, None] - x[None, :]) / 2
        dy0 = (y[:, None] - y[None, :]) / 2
        for n, (sx, sy) in enumerate(s):
            g = ((dx0 + sx) ** 2 + (dy0 + sy) ** 2) ** (5.0 / 6.0)
            out[n] = -_DD_CONST * (wi @ g @ wj)
    elif method == "qmc":
        x1, y1, x2, y2 = _qmc_pairs(qmc_log2)
        f = zernike_xy(i, x1, y1) * zernike_xy(j, x2, y2) * np.pi ** 2
        for n, (sx, sy) in enumerate(s):
            g = (((x1 - x2) / 2 + sx) ** 2 + ((y1 - y2) / 2 + sy) ** 2) ** (5.0 / 6.0)
            out[n] = -_DD_CONST * np.mean(f * g)
    else:
        raise ConfigError(f"unknown quadrature {method!r}")
    return out.reshape(shape) if shape else float(out[0])


def midpoint_dr0(cfg):
    """D/r0 of the mid-path single-layer model: (D/r0)^(5/3) = 2.91k²Cn²L D^(5/3)/(6.88·2^(5/3))."""
    if not cfg.profile.is_constant:
        raise ConfigError("the mid-path model assumes a constant Cn2 profile")
    v = 2.91 * cfg.k ** 2 * cfg.profile.c * cfg.L * cfg.D ** (5.0 / 3.0) / (6.88 * 2 ** (5.0 / 3.0))
    return v ** 0.6


def spatial_corr_numeric(i, j, s_vec, cfg, method="tensor", **kw):
    """E[a_i(u) a_j(u')] from the multi-aperture double-disk integral (constant Cn²)."""
    if not cfg.profile.is_constant:
        raise ConfigError("spatial_corr_numeric needs a constant Cn2 profile; use exact_path_corr")
    return midpoint_dr0(cfg) ** (5.0 / 3.0) * double_disk(i, j, s_vec, method, **kw)


S_CAP = 50.0


def exact_path_corr(i, j, s_vec, cfg, n_z=32, parity_rule=True, **kw):
    """Path-resolved correlation: outer Gauss quadrature over z of the disk-pair integral.

    E = (2.91 k² D^(5/3)/6.88) ∫ Cn²(z) ((L-z)/L)^(5/3) K_ij(s z/(L-z)) dz,
    with the rescaled separation capped at S_CAP.
    """
    if parity_rule and (i - j) % 2:
        s = np.asarray(s_vec, float)
        return np.zeros(s.shape[:-1]) if s.ndim > 1 else 0.0
    L = cfg.L
    zx, zw = np.polynomial.legendre.leggauss(n_z)
    z = (zx + 1) / 2 * L
    wz = zw / 2 * L
    s = np.atleast_2d(np.asarray(s_vec, float))
    shape = np.asarray(s_vec).shape[:-1]
    total = np.zeros(len(s))
    pref = 2.91 * cfg.k ** 2 * cfg.D ** (5.0 / 3.0) / 6.88
    for zk, wk in zip(z, wz):
        scale = zk / (L - zk)
        sz = s * scale
        norm = np.linalg.norm(sz, axis=1, keepdims=True)
        sz = np.where(norm > S_CAP, sz * S_CAP / np.maximum(norm, 1e-300), sz)
        weight = wk * float(cfg.profile(zk)) * ((L - zk) / L) ** (5.0 / 3.0)
        if weight == 0:
            continue
        total += weight * np.atleast_1d(double_disk(i, j, sz, **kw))
    total *= pref
    return total.reshape(shape) if shape else float(total[0])


# ---------------------------------------------- lattice tables for higher modes

def _lattice_mode(j, n, sub=8):
    """Cell averages of Z_j over the (2n+1)² lattice cells of width 1/n.

    Cells cut by the rim are integrated over their inside part only (sub×sub
    supersampling); the residual piston is removed and unit norm restored.
    A bare point-sampled disk leaks piston, which couples to the unbounded
    |·|^(5/3) growth of the kernel.
    """
    h = 1.0 / n
    off = (np.arange(sub) + 0.5) / sub - 0.5
    c = np.arange(-n, n + 1) * h
    fine = (c[:, None] + off[None, :] * h).ravel()
    Y, X = np.meshgrid(fine, fine, indexing="ij")
    inside = X * X + Y * Y <= 1.0
    z = zernike_xy(j, X, Y)
    if j > 1:
        z = z - z[inside].mean()
    z = z * np.sqrt(np.pi / ((h / sub) ** 2 * np.sum(z[inside] ** 2)))
    z = np.where(inside, z, 0.0)
    m = 2 * n + 1
    return z.reshape(m, sub, m, sub).mean(axis=(1, 3))


@lru_cache(maxsize=256)
def lattice_kernel(i, j, n=24, s_max=4.0):
    """K_ij(s) on the Cartesian lattice s = (ky, kx)/(2n), |k| <= 2n·s_max.

    Riemann rule on pixelized disks (n samples per unit radius) accelerated
    by FFT: K(s) = -(6.88/2π²) h⁴ Σ_Δ X(Δ) |Δ/2 + s|^(5/3) with X the lattice
    cross-correlation of Z_i and Z_j. Returns (axis, table) where
    table[a, b] is the value at (s_y, s_x) = (axis[a], axis[b]).
    """
    h = 1.0 / n
    Zi = _lattice_mode(i, n)
    Zj = _lattice_mode(j, n)
    T = int(np.ceil(2 * n * s_max))
    m = 2 * n + 1
    P = 1
    while P < 2 * (T + 2 * n) + m:
        P *= 2
    # X(Δ) = Σ_ρ Z_i(ρ) Z_j(ρ - Δ), Δ in samples; computed by FFT
    Fi = np.fft.fft2(Zi, (P, P))
    Fj = np.fft.fft2(Zj, (P, P))
    Xc = np.fft.ifft2(Fi * np.conj(Fj)).real     # index Δ mod P
    # s = t h / 2 with integer t: |Δ h/2 + t h/2| = (h/2)|Δ + t|
    idx = np.fft.fftfreq(P, 1.0 / P)
    gy, gx = np.meshgrid(idx, idx, indexing="ij")
    g = (gx * gx + gy * gy) ** (5.0 / 6.0)
    # Σ_Δ X(Δ) g(Δ + t) = correlation of X with g
    corr = np.fft.ifft2(np.conj(np.fft.fft2(Xc)) * np.fft.fft2(g)).real
    corr = np.fft.fftshift(corr)
    cc = P // 2
    tab = -_DD_CONST * h ** 4 * (h / 2) ** (5.0 / 3.0) * corr[cc - T: cc + T + 1, cc - T: cc + T + 1]
    axis = np.arange(-T, T + 1) * h / 2
    return axis, tab


@dataclass
class CorrelationKernel:
    """Autocovariance C(s) of one mode, callable on (s_y, s_x) in units of D.

    variance is C(0); normalized() returns C/C(0).
    """

    mode: tuple
    fn: object
    variance: float
    angular: bool = False

    def __call__(self, sy, sx):
        return self.fn(np.asarray(sy, float), np.asarray(sx, float))

    def normalized(self):
        v = self.variance
        return CorrelationKernel(self.mode, lambda sy, sx: self.fn(sy, sx) / v, 1.0, self.angular)


def tilt_kernel(j, D_over_r0=1.0):
    def fn(sy, sx):
        s = np.hypot(sx, sy)
        psi = np.arctan2(sy, sx)
        return tilt_correlation(j, s, psi, D_over_r0)
    return CorrelationKernel((j, j), fn, tilt_correlation(j, 0.0, 0.0, D_over_r0), True)


FAR_S_MAX = 16.0


def mode_kernel(j, D_over_r0=1.0, n=24, s_max=4.0):
    """Autocovariance of mode j: closed form for tilts, lattice tables otherwise.

    A fine table (n samples per radius) covers |s_x|, |s_y| <= s_max; a
    coarse n/2 table continues to FAR_S_MAX, since the m = 2 kernels keep a
    few percent of their variance out to s ~ 4. Beyond that the kernel is 0.
    """
    if j in (2, 3):
        return tilt_kernel(j, D_over_r0)
    scale = D_over_r0 ** (5.0 / 3.0)
    axis, tab = lattice_kernel(j, j, n, s_max)
    fine = RegularGridInterpolator((axis, axis), tab * scale, bounds_error=False, fill_value=0.0)
    fax, ftab = lattice_kernel(j, j, max(n // 2, 8), FAR_S_MAX)
    far = RegularGridInterpolator((fax, fax), ftab * scale, bounds_error=False, fill_value=0.0)
    edge = axis[-1]

    def fn(sy, sx):
        sy, sx = np.broadcast_arrays(sy, sx)
        pts = np.stack([sy, sx], axis=-1)
        near = (np.abs(sy) <= edge) & (np.abs(sx) <= edge)
        return np.where(near, fine(pts), far(pts))

    c0 = tab[len(axis) // 2, len(axis) // 2] * scale
    return CorrelationKernel((j, j), fn, c0, noll_unindex(j).m != 0)


# ------------------------------------------------------------- field sampling

@dataclass
class WssSample:
    field: np.ndarray
    clipped_fraction: float
    flagged: bool


def _embedding_spectrum(kernel, H, W, s_per_pixel, pad):
    Ph, Pw = pad * H, pad * W
    ly = np.fft.fftfreq(Ph, 1.0 / Ph)
    lx = np.fft.fftfreq(Pw, 1.0 / Pw)
    LY, LX = np.meshgrid(ly, lx, indexing="ij")
    C = kernel(LY * s_per_pixel, LX * s_per_pixel)
    S = np.fft.fft2(C).real
    neg = -S[S < 0].sum()
    tot = np.abs(S).sum()
    frac = max(float(neg / tot), 0.0) if tot > 0 else 0.0
    S = np.clip(S, 0, None)
    # clipping adds variance; rescale so the zero-lag value C(0) = mean(S) is kept
    if frac > 0 and S.mean() > 0:
        S *= C[0, 0] / S.mean()
    return S, frac


def sample_field_wss(kernel, H, W, s_per_pixel, seed, index=(), pad=4, count=None):
    """Zero-mean Gaussian field(s) with autocovariance kernel(lag · s_per_pixel).

    Circulant embedding on a (pad·H)×(pad·W) torus; negative spectral values
    are clipped to zero, the spectrum rescaled to keep the zero-lag variance,
    and the clipped fraction of spectral mass reported (flagged above 1%).
    """
    S, frac = _embedding_spectrum(kernel, H, W, s_per_pixel, pad)
    out = _draw(S, frac, H, W, stream(seed, "zfield.wss", *index), count)
    return WssSample(out, frac, frac > 0.01)


def _draw(S, frac, H, W, rng, count):
    if frac > 0.01:
        warnings.warn(f"WSS embedding clipped {frac:.2%} of spectral mass", ClippingWarning)
    Ph, Pw = S.shape
    # complex draw: real and imaginary parts are independent fields
    amp = np.sqrt(S / (Ph * Pw))
    n = 1 if count is None else count
    out = np.empty((n, H, W))
    batch = max(1, 2 ** 22 // (Ph * Pw))
    t = 0
    while t < n:
        b = min(batch, (n - t + 1) // 2)
        e = rng.standard_normal((b, Ph, Pw)) + 1j * rng.standard_normal((b, Ph, Pw))
        g = sp_fft.fft2(e * amp, workers=-1)[:, :H, :W]
        pair = np.stack([g.real, g.imag], axis=1).reshape(2 * b, H, W)
        take = min(2 * b, n - t)
        out[t:t + take] = pair[:take]
        t += take
    return out[0] if count is None else out


@dataclass
class ZernikeField:
    a: np.ndarray          # H×W×N_modes
    pitch: float           # object-plane meters per pixel
    D: float
    r0: float


def sample_zernike_space(cfg, n_modes, H, W, seed, index=(), parity_rule=True, pad=4):
    """Zernike coefficient field: per-mode WSS fields, then Noll mixing.

    Each mode j >= 2 gets an independent unit-variance field with the
    normalized autocovariance of that mode; the per-pixel vectors are then
    multiplied by the Cholesky factor of the Noll matrix at cfg's D/r0, so
    the single-pixel covariance is the Noll matrix.
    """
    r0 = cfg.r0
    a = np.zeros((H, W, n_modes))
    if not np.isfinite(r0):
        return ZernikeField(a, cfg.pixel_pitch, cfg.D, r0)
    spp = cfg.pixel_pitch / cfg.D
    unit = np.zeros((H, W, n_modes))
    for j in range(2, n_modes + 1):
        S, frac = _unit_spectrum(j, H, W, spp, pad)
        unit[:, :, j - 1] = _draw(S, frac, H, W, stream(seed, "zfield.wss", *index, j), None)
    L = noll_matrix(n_modes, cfg.D / r0, parity_rule).chol
    a = unit @ L.T
    return ZernikeField(a, cfg.pixel_pitch, cfg.D, r0)


@lru_cache(maxsize=64)
def _unit_spectrum(j, H, W, s_per_pixel, pad):
    """Embedding spectrum of the normalized mode-j kernel; reused across frames."""
    return _embedding_spectrum(mode_kernel(j).normalized(), H, W, s_per_pixel, pad)


# --------------------------------------------------------------- tilt statistics

def tilt_kappa2(D_over_r0):
    """κ² = (16/π²)(c2/2^(5/3)) I0(0) (D/r0)^(5/3): tilt variance in pixels²."""
    i0, _ = _tilt_interp(0.0)
    return 16 / np.pi ** 2 * C2_TILT / 2 ** (5.0 / 3.0) * i0 * D_over_r0 ** (5.0 / 3.0)


def ztilt_theory(lags, s_per_pixel, D_over_r0, j=2, psi0=0.0):
    """Z-tilt E[α(u)α(u')] in pixels² at integer pixel lags along ψ0."""
    s = np.asarray(lags, float) * s_per_pixel
    return 16 / np.pi ** 2 * tilt_correlation(j, s, psi0, D_over_r0)


def dtilt_theory(lags, s_per_pixel, D_over_r0, j=2, psi0=0.0):
    z0 = ztilt_theory(0, s_per_pixel, D_over_r0, j, psi0)
    return 2 * (z0 - ztilt_theory(lags, s_per_pixel, D_over_r0, j, psi0))


def _axis_slice(axis, a, b):
    idx = [slice(None)] * (axis + 1)
    idx[axis] = slice(a, b)
    return tuple(idx)


def ztilt_stat(fields, max_lag, axis=1):
    """Empirical E[α(x)α(x+lag)] along one axis, lags 0..max_lag (pixels²)."""
    f = np.asarray(fields, float)
    if f.shape[0] < 2:
        raise ConfigError("need several realizations")
    out = np.empty(max_lag + 1)
    n = f.shape[axis + 1]
    for lag in range(max_lag + 1):
        a = f[_axis_slice(axis + 1, 0, n - lag)]
        b = f[_axis_slice(axis + 1, lag, n)]
        out[lag] = np.mean(a * b)
    return out


def dtilt_stat(fields, max_lag, axis=1):
    """Empirical E[(α(x) - α(x+lag))²] along one axis (pixels²)."""
    f = np.asarray(fields, float)
    if f.shape[0] < 2:
        raise ConfigError("need several realizations")
    out = np.empty(max_lag + 1)
    n = f.shape[axis + 1]
    for lag in range(max_lag + 1):
        a = f[_axis_slice(axis + 1, 0, n - lag)]
        b = f[_axis_slice(axis + 1, lag, n)]
        out[lag] = np.mean((a - b) ** 2)
    return out
