"""Fourier-optics kernels: pupils, PSF/OTF formation, propagation and
spatially varying convolution (scattering and gathering forms).

FFT helpers keep the zero frequency (and the spatial origin) at index N//2.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from ._util import AliasingWarning, ConfigError, is_pow2


def ft2(x):
    """Centered forward FFT (origin at N//2 in both domains)."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1))), axes=(-2, -1))


def ift2(x):
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(x, axes=(-2, -1))), axes=(-2, -1))


def centered_coords(N, dx=1.0):
    """1-D sample coordinates with the origin at index N//2."""
    return (np.arange(N) - N // 2) * dx


@dataclass
class ComplexField:
    data: np.ndarray
    dx: float
    wavelength: float = None
    aliasing_warning: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        n = self.data.shape[0]
        if self.data.ndim != 2 or self.data.shape[1] != n or not is_pow2(n):
            raise ConfigError("ComplexField needs a square power-of-two grid")
        if not self.dx > 0:
            raise ConfigError("dx must be positive")

    @property
    def N(self):
        return self.data.shape[0]

    def energy(self):
        return float(np.sum(np.abs(self.data) ** 2) * self.dx ** 2)


@dataclass
class Pupil:
    mask: np.ndarray
    diameter_samples: int

    @property
    def N(self):
        return self.mask.shape[0]


def pupil_center(N, diameter_samples):
    """Disk center (in sample units) that keeps the disk symmetric on the lattice.

    Even diameters sit between samples, odd diameters on a sample.
    """
    return (N - 1) / 2.0 if diameter_samples % 2 == 0 else float(N // 2)


def pupil_coords(N, diameter_samples):
    """Normalized pupil coordinates (x, y) with the disk edge at radius 1."""
    c = pupil_center(N, diameter_samples)
    t = (np.arange(N) - c) / (diameter_samples / 2.0)
    y, x = np.meshgrid(t, t, indexing="ij")
    return x, y


def make_pupil(shape, N, diameter_samples):
    d = int(diameter_samples)
    if d < 1:
        raise ConfigError("diameter_samples must be >= 1")
    if d > N:
        raise ConfigError("pupil larger than the grid")
    x, y = pupil_coords(N, d)
    if shape == "circle":
        mask = (x * x + y * y) <= 1.0 + 1e-12
    elif shape == "square":
        mask = (np.abs(x) <= 1.0 + 1e-12) & (np.abs(y) <= 1.0 + 1e-12)
    else:
        raise ConfigError(f"unknown pupil shape {shape!r}")
    return Pupil(mask.astype(float), d)


def psf_from_phase(pupil, phase, oversample=2):
    """Unit-sum PSF |FFT(P e^{jφ})|² on an (oversample·N)² grid, centered."""
    if oversample < 1 or int(oversample) != oversample:
        raise ConfigError("oversample must be an integer >= 1")
    phase = np.asarray(phase, dtype=float)
    if phase.shape[-2:] != pupil.mask.shape:
        raise ConfigError("phase grid does not match the pupil grid")
    N = pupil.N
    M = int(oversample) * N
    field = pupil.mask * np.exp(1j * phase)
    pad = np.zeros(phase.shape[:-2] + (M, M), dtype=complex)
    pad[..., :N, :N] = field
    psf = np.abs(np.fft.fft2(pad)) ** 2
    psf = np.fft.fftshift(psf, axes=(-2, -1))
    return psf / psf.sum(axis=(-2, -1), keepdims=True)


def fresnel_kernel(N, dx, z, wavelength):
    """Sampled Fresnel impulse response e^{jkz}/(jλz) e^{jk|ξ|²/2z}."""
    if not z > 0:
        raise ValueError("Fresnel kernel needs z > 0")
    k = 2 * np.pi / wavelength
    x = centered_coords(N, dx)
    r2 = x[None, :] ** 2 + x[:, None] ** 2
    # kz mod 2π computed from z/λ to keep precision for km-scale z
    kz = 2 * np.pi * np.mod(z / wavelength, 1.0)
    h = np.exp(1j * (kz + k * r2 / (2 * z))) / (1j * wavelength * z)
    return ComplexField(h, dx, wavelength)


def _transfer_function(N, dx, z, wavelength):
    f = np.fft.fftfreq(N, dx)
    fsq = f[None, :] ** 2 + f[:, None] ** 2
    a = (wavelength ** 2) * fsq
    prop = a < 1.0
    # k z (sqrt(1-a) - 1), written to avoid cancellation
    dphi = -2 * np.pi * (z / wavelength) * a / (1.0 + np.sqrt(np.where(prop, 1.0 - a, 1.0)))
    kz = 2 * np.pi * np.mod(z / wavelength, 1.0)
    H = np.where(prop, np.exp(1j * (kz + dphi)), 0.0)
    return H


def transfer_sampling_ok(N, dx, z, wavelength):
    """Transfer-function sampling bound dx >= λ|z|/(N dx)."""
    return dx >= wavelength * abs(z) / (N * dx)


def propagate(field, z, method="angular_spectrum", wavelength=None):
    """Propagate a sampled field by distance z.

    angular_spectrum: exact scalar transfer function on the FFT lattice,
    evanescent components discarded (unitary on the propagating band, so
    negative z undoes positive z). fresnel_conv: circular convolution with the
    sampled Fresnel kernel, z > 0 only.
    """
    lam = wavelength if wavelength is not None else field.wavelength
    if lam is None:
        raise ConfigError("wavelength required")
    N, dx = field.N, field.dx
    if z == 0:
        return ComplexField(field.data.copy(), dx, lam)
    if method == "angular_spectrum":
        bad = not transfer_sampling_ok(N, dx, z, lam)
        out = np.fft.ifft2(np.fft.fft2(field.data) * _transfer_function(N, dx, z, lam))
    elif method == "fresnel_conv":
        # impulse-response sampling wants the opposite inequality
        bad = dx > lam * z / (N * dx)
        h = fresnel_kernel(N, dx, z, lam).data
        out = np.fft.ifft2(np.fft.fft2(field.data) * np.fft.fft2(np.fft.ifftshift(h))) * dx * dx
    else:
        raise ConfigError(f"unknown propagation method {method!r}")
    if bad:
        warnings.warn(f"{method}: sampling bound violated for z={z}", AliasingWarning, stacklevel=2)
    return ComplexField(out, dx, lam, aliasing_warning=bool(bad))


def rs_oracle(field, z, obs_points, allow_large=False):
    """Direct Rayleigh-Sommerfeld sum at the given (x, y) observation points."""
    lam = field.wavelength
    if field.N > 256 and not allow_large:
        raise ConfigError("rs_oracle refuses N > 256 (set allow_large)")
    k = 2 * np.pi / lam
    x = centered_coords(field.N, field.dx)
    xi, yi = np.meshgrid(x, x, indexing="xy")
    nz = np.abs(field.data) > 0
    u, xs, ys = field.data[nz], xi[nz], yi[nz]
    pts = np.atleast_2d(np.asarray(obs_points, dtype=float))
    out = np.empty(len(pts), dtype=complex)
    for n, (px, py) in enumerate(pts):
        r = np.sqrt((px - xs) ** 2 + (py - ys) ** 2 + z * z)
        out[n] = np.sum(u * np.exp(1j * k * r) / r * (z / r)) * field.dx ** 2 / (1j * lam)
    return out


def _pad(image, p, boundary):
    if p == 0:
        return image
    if boundary == "zero":
        return np.pad(image, p)
    if boundary == "replicate":
        return np.pad(image, p, mode="edge")
    raise ConfigError(f"unknown boundary {boundary!r}")


def convolve(image, kernel, boundary="zero"):
    """Same-size convolution with the kernel origin at index K//2."""
    K0, K1 = kernel.shape
    H, W = image.shape
    p = max(K0, K1)
    padded = _pad(image, p, boundary)
    full = signal.fftconvolve(padded, kernel, mode="full")
    return full[p + K0 // 2: p + K0 // 2 + H, p + K1 // 2: p + K1 // 2 + W]


def incoherent_image(psf, ideal, boundary="zero"):
    return np.real_if_close(convolve(np.asarray(ideal, float), np.asarray(psf, float), boundary))


def coherent_image(asf, field, boundary="zero"):
    return np.abs(convolve(np.asarray(field, complex), np.asarray(asf, complex), boundary)) ** 2


def otf_from_psf(psf):
    """Centered OTF normalized to 1 at zero frequency."""
    psf = np.asarray(psf, float)
    s = psf.sum()
    if not s > 0:
        raise ValueError("PSF must have positive sum")
    return ft2(psf) / s


def atf_from_asf(asf):
    A = ft2(np.asarray(asf, complex))
    c = A[A.shape[0] // 2, A.shape[1] // 2]
    return A / c if c != 0 else A


def diffraction_otf_circular(f, f0):
    """Closed-form OTF of a circular aperture with coherent cutoff f0."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    x = np.clip(f / (2 * f0), 0.0, 1.0)
    out = (2 / np.pi) * (np.arccos(x) - x * np.sqrt(1 - x * x))
    out = np.where(f >= 2 * f0, 0.0, out)
    return out if out.ndim else float(out)


def radial_profile(img, center=None, nbins=None):
    """Mean of img over integer-radius rings about center (default N//2)."""
    H, W = img.shape
    cy, cx = center if center is not None else (H // 2, W // 2)
    y, x = np.indices(img.shape)
    r = np.rint(np.hypot(y - cy, x - cx)).astype(int)
    nb = nbins if nbins is not None else r.max() + 1
    keep = r < nb
    tot = np.bincount(r[keep], weights=img[keep].real, minlength=nb)
    cnt = np.bincount(r[keep], minlength=nb)
    return tot / np.maximum(cnt, 1)


def _kernel_field(provider, H, W):
    """Materialize a kernel provider as an (H, W, K, K) array."""
    if callable(provider):
        first = np.asarray(provider(0, 0), float)
        ks = np.empty((H, W) + first.shape)
        for r in range(H):
            for c in range(W):
                ks[r, c] = provider(r, c)
        return ks
    ks = np.asarray(provider, float)
    if ks.ndim == 2:
        ks = np.broadcast_to(ks, (H, W) + ks.shape)
    return ks


def sv_convolve_scatter(image, psf_provider, boundary="zero"):
    """Scattering convolution: out(x) = Σ_u I(u) h_u(x - u).

    psf_provider is either a callable (row, col) -> K×K kernel, an
    (H, W, K, K) array or a single kernel. With boundary="replicate" the
    image and kernel field are edge-extended so off-frame sources contribute.
    """
    image = np.asarray(image, float)
    H, W = image.shape
    ks = _kernel_field(psf_provider, H, W)
    K0, K1 = ks.shape[-2:]
    c0, c1 = K0 // 2, K1 // 2
    p = max(K0, K1)
    img = _pad(image, p, boundary)
    if boundary == "replicate":
        ks = np.pad(ks, ((p, p), (p, p), (0, 0), (0, 0)), mode="edge")
    else:
        ks = np.pad(ks, ((p, p), (p, p), (0, 0), (0, 0)))
    Hp, Wp = img.shape
    out = np.zeros((Hp + 2 * p, Wp + 2 * p))
    for a in range(K0):
        for b in range(K1):
            contrib = img * ks[:, :, a, b]
            out[p + a - c0: p + a - c0 + Hp, p + b - c1: p + b - c1 + Wp] += contrib
    return out[2 * p: 2 * p + H, 2 * p: 2 * p + W]


def sv_convolve_gather(image, psf_provider, boundary="zero"):
    """Gathering convolution: out(x) = Σ_u I(u) h_x(x - u)."""
    image = np.asarray(image, float)
    H, W = image.shape
    ks = _kernel_field(psf_provider, H, W)
    K0, K1 = ks.shape[-2:]
    c0, c1 = K0 // 2, K1 // 2
    p = max(K0, K1)
    img = _pad(image, p, boundary)
    out = np.zeros((H, W))
    for a in range(K0):
        for b in range(K1):
            # source u = x - (a - c)
            src = img[p - (a - c0): p - (a - c0) + H, p - (b - c1): p - (b - c1) + W]
            out += ks[:, :, a, b] * src
    return out
