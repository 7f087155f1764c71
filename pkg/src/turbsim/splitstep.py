"""Split-step reference simulator: point sources propagated through a stack
of phase screens, PSF grids, and spatially varying image synthesis.

Geometry. Screens sit at z_i (z = 0 aperture, z = L object). A point at
object position u reaches aperture point ξ along the ray that crosses plane
z at ξ(1 - z/L) + u z/L. Propagation is done in the frame sheared along that
ray: the source is kept on axis and each screen is read at an offset
u z_i / L from a shared master screen. The paraxial wave equation is exactly
invariant under this shear up to the linear phase exp(-jk u·ξ/L), which is
the geometric image displacement and is added back only on request.

Source. The point source is the field that a vacuum back-propagation of the
windowed spherical wave W(ξ) exp(jk|ξ|²/2L) produces at the object plane.
It is a band-limited spot of width ~λL/(2w); forward propagation through
vacuum returns the windowed spherical wave to round-off, so lens
cancellation leaves zero phase in vacuum.
"""

from dataclasses import dataclass, field

import numpy as np

from . import atmosphere as atm
from ._util import ConfigError, is_pow2
from .optics import _transfer_function, centered_coords, pupil_coords
from .screens import PhaseScreen, ScreenSpec, make_screen


@dataclass
class SplitStepPlan:
    cfg: atm.OpticalConfig
    M: int
    positions: np.ndarray             # z_i from the aperture [m]
    screens: list                     # one master PhaseScreen per plane
    point_grid: list = field(default_factory=lambda: [(0.0, 0.0)])   # u [m]
    lens_cancel: bool = True
    window_radius: float = 0.0        # W(ξ) radius; 0 means 0.8 D
    kernel_size: int = 33

    def __post_init__(self):
        z = np.asarray(self.positions, float)
        L = self.cfg.L
        if len(z) != len(self.screens) or len(z) != self.M:
            raise ConfigError("one screen per position required")
        if np.any(np.diff(z) <= 0) or (len(z) and (z[0] <= 0 or z[-1] >= L)):
            raise ConfigError("screen positions must satisfy 0 < z_1 < ... < z_M < L")
        if not is_pow2(self.cfg.N):
            raise ConfigError("propagation grid must be a power of two")
        self.positions = z
        self._source = None

    @property
    def N(self):
        return self.cfg.N

    @property
    def dx(self):
        return self.cfg.grid_dx

    @property
    def diameter_samples(self):
        return max(1, int(round(self.cfg.D / self.dx)))

    def steps(self):
        """Propagation distances source -> screen M -> ... -> screen 1 -> aperture."""
        z = np.concatenate([[self.cfg.L], self.positions[::-1], [0.0]])
        return -np.diff(z)

    def aperture_carrier(self):
        x = centered_coords(self.N, self.dx)
        r2 = x[None, :] ** 2 + x[:, None] ** 2
        w = self.window_radius or 0.8 * self.cfg.D
        return np.exp(-(np.sqrt(r2) / w) ** 16), r2

    def source(self):
        if self._source is None:
            W, r2 = self.aperture_carrier()
            lam, L = self.cfg.wavelength, self.cfg.L
            U = W * np.exp(1j * self.cfg.k * r2 / (2 * L))
            for d in self.steps()[::-1]:
                U = np.fft.ifft2(np.fft.fft2(U) * _transfer_function(self.N, self.dx, -d, lam))
            self._source = U
        return self._source


def slab_r0(cfg, M):
    """Plane-wave r0 of each of M equal slabs (∫Cn² over the slab).

    The spherical-wave weighting is not applied here: it arises from the
    converging-cone geometry of the propagation itself.
    """
    L = cfg.L
    edges = np.linspace(0.0, L, M + 1)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        integral = cfg.profile.integrate(b, z0=a)
        out.append(atm._fried_from_integral(cfg.k, integral))
    return np.array(out)


def master_size(cfg, point_grid):
    """Smallest power-of-two master screen covering every per-point crop."""
    N, dx = cfg.N, cfg.grid_dx
    umax = max((max(abs(a), abs(b)) for a, b in point_grid), default=0.0)
    need = N + 2 * int(np.ceil(umax / dx)) + 2
    n = N
    while n < need:
        n *= 2
    return n


def make_plan(cfg, M=10, seed=0, trial=0, point_grid=None, lens_cancel=True,
              subharmonic_levels=3, zero_screens=False, kernel_size=33):
    """Plan with M midpoint screens drawn from the (seed, trial) stream."""
    pts = [(0.0, 0.0)] if point_grid is None else list(point_grid)
    L = cfg.L
    z = (np.arange(M) + 0.5) * L / M
    r0s = slab_r0(cfg, M)
    n = master_size(cfg, pts)
    screens = []
    for i in range(M):
        if zero_screens or not np.isfinite(r0s[i]):
            screens.append(PhaseScreen(np.zeros((n, n)), cfg.grid_dx, np.inf, seed, (trial, i)))
        else:
            screens.append(make_screen(n, cfg.grid_dx, ScreenSpec(r0s[i]), seed, (trial, i),
                                       subharmonic_levels))
    return SplitStepPlan(cfg, M, z, screens, pts, lens_cancel, kernel_size=kernel_size)


def _crop(screen, offset_samples, N):
    n = screen.phase.shape[0]
    c = n // 2
    oy, ox = offset_samples
    r0 = c - N // 2 + oy
    c0 = c - N // 2 + ox
    if r0 < 0 or c0 < 0 or r0 + N > n or c0 + N > n:
        raise ConfigError("point outside the master-screen window")
    return screen.phase[r0:r0 + N, c0:c0 + N]


def propagate_points(plan, points, geometric_tilt=False):
    """Aperture-plane fields for a batch of object points u = (uy, ux) [m]."""
    N, dx, lam, L = plan.N, plan.dx, plan.cfg.wavelength, plan.cfg.L
    pts = np.atleast_2d(np.asarray(points, float))
    B = len(pts)
    U = np.broadcast_to(plan.source(), (B, N, N)).copy()
    steps = plan.steps()
    H = [_transfer_function(N, dx, d, lam) for d in steps]
    # screens are imparted from the object side inwards: M, M-1, ..., 1
    order = list(range(plan.M - 1, -1, -1))
    for s, i in enumerate(order):
        U = np.fft.ifft2(np.fft.fft2(U) * H[s])
        zi = plan.positions[i]
        ph = np.empty((B, N, N))
        for b, (uy, ux) in enumerate(pts):
            off = (int(np.rint(uy * zi / L / dx)), int(np.rint(ux * zi / L / dx)))
            ph[b] = _crop(plan.screens[i], off, N)
        U = U * np.exp(1j * ph)
    U = np.fft.ifft2(np.fft.fft2(U) * H[-1])
    x = centered_coords(N, dx)
    if plan.lens_cancel:
        r2 = x[None, :] ** 2 + x[:, None] ** 2
        U = U * np.exp(-1j * plan.cfg.k * r2 / (2 * L))
    if geometric_tilt:
        k = plan.cfg.k
        for b, (uy, ux) in enumerate(pts):
            U[b] *= np.exp(-1j * k * (uy * x[:, None] + ux * x[None, :]) / L)
    return U


def propagate_point(plan, u=(0.0, 0.0), geometric_tilt=True):
    """Aperture field for one object point, including its geometric tilt."""
    return propagate_points(plan, [u], geometric_tilt)[0]


def pupil_mask(plan):
    x, y = pupil_coords(plan.N, plan.diameter_samples)
    return ((x * x + y * y) <= 1.0 + 1e-12).astype(float)


def psf_from_aperture_field(plan, U, recenter=False):
    """Nyquist-sampled PSF(s) |FFT(P U)|² on a (2d)² grid, centred, unit sum.

    recenter=True rolls each PSF so its argmax sits at the centre (tilt
    removal for short-exposure statistics).
    """
    U = np.asarray(U)
    single = U.ndim == 2
    U = np.atleast_3d(U) if not single else U[None]
    N, d = plan.N, plan.diameter_samples
    Q = min(2 * d, N)
    a = N // 2 - Q // 2
    P = pupil_mask(plan)
    F = (P * U)[:, a:a + Q, a:a + Q]
    psf = np.fft.fftshift(np.abs(np.fft.fft2(F)) ** 2, axes=(-2, -1))
    if recenter:
        for b in range(len(psf)):
            iy, ix = np.unravel_index(np.argmax(psf[b]), psf[b].shape)
            psf[b] = np.roll(psf[b], (Q // 2 - iy, Q // 2 - ix), axis=(0, 1))
    psf /= psf.sum(axis=(-2, -1), keepdims=True)
    return psf[0] if single else psf


def crop_kernel(psf, K):
    """Centre K×K crop (K odd), renormalized to unit sum."""
    Q = psf.shape[-1]
    if K > Q:
        pad = (K - Q + 1) // 2 + 1
        psf = np.pad(psf, [(0, 0)] * (psf.ndim - 2) + [(pad, pad), (pad, pad)])
        Q = psf.shape[-1]
    a = Q // 2 - K // 2
    k = psf[..., a:a + K, a:a + K]
    return k / k.sum(axis=(-2, -1), keepdims=True)


@dataclass
class PsfGrid:
    """Kernels at object pixels; nearest-grid-point lookup in between."""

    pixels: np.ndarray      # (P, 2) integer (row, col)
    psfs: np.ndarray        # (P, K, K), unit sum

    def kernel_at(self, r, c):
        d = (self.pixels[:, 0] - r) ** 2 + (self.pixels[:, 1] - c) ** 2
        return self.psfs[int(np.argmin(d))]

    def kernel_field(self, H, W):
        out = np.empty((H, W) + self.psfs.shape[1:])
        rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        d = ((self.pixels[:, 0][:, None, None] - rr) ** 2
             + (self.pixels[:, 1][:, None, None] - cc) ** 2)
        idx = np.argmin(d, axis=0)
        out[:] = self.psfs[idx]
        return out


def object_pixels_to_u(cfg, pixels, shape):
    """Object-plane coordinates [m] of pixel centres (image centre on axis)."""
    H, W = shape
    p = cfg.pixel_pitch
    pix = np.asarray(pixels, float)
    return np.stack([(pix[:, 0] - H // 2) * p, (pix[:, 1] - W // 2) * p], axis=1)


def grid_pixels(shape, stride):
    H, W = shape
    rows = np.arange(stride // 2, H, stride)
    cols = np.arange(stride // 2, W, stride)
    return np.array([(r, c) for r in rows for c in cols], dtype=int)


def psf_grid(plan, pixels, shape, batch=64):
    """One K×K PSF per object pixel in `pixels` (turbulent tilt kept)."""
    us = object_pixels_to_u(plan.cfg, pixels, shape)
    out = []
    for s in range(0, len(us), batch):
        U = propagate_points(plan, us[s:s + batch])
        out.append(crop_kernel(psf_from_aperture_field(plan, U), plan.kernel_size))
    return PsfGrid(np.asarray(pixels, int), np.concatenate(out))


def plan_for_image(cfg, shape, stride=1, **kw):
    pixels = grid_pixels(shape, stride)
    us = object_pixels_to_u(cfg, pixels, shape)
    return make_plan(cfg, point_grid=[tuple(u) for u in us], **kw), pixels


def simulate_image(plan, ideal, pixels, boundary="zero"):
    """Algorithm: per-point split-step PSFs, then scattering convolution."""
    from .optics import sv_convolve_scatter
    ideal = np.asarray(ideal, float)
    grid = psf_grid(plan, pixels, ideal.shape)
    return sv_convolve_scatter(ideal, grid.kernel_field(*ideal.shape), boundary), grid
