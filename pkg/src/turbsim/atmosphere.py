"""Closed-form turbulence statistics.

Path coordinate convention used everywhere in this package: z = 0 at the
aperture, z = L at the object.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._util import ConfigError, ValidityWarning

# Profile quadrature tolerance
_RTOL = 1e-8

_SLCD_BREAKS = (19.0, 230.0, 850.0, 7000.0)


def kolmogorov_psd(k_mag, cn2):
    """Kolmogorov refractive-index PSD 0.033 Cn² |k|^(-11/3)."""
    k = np.asarray(k_mag, dtype=float)
    if np.any(k <= 0):
        raise ValueError("Kolmogorov PSD is singular at k = 0")
    out = 0.033 * cn2 * k ** (-11.0 / 3.0)
    return out if out.ndim else float(out)


def von_karman_psd(k_mag, cn2, L0, l0):
    """von Karman PSD with outer scale L0 and inner scale l0 (both meters)."""
    if L0 <= 0 or l0 <= 0:
        raise ValueError("L0 and l0 must be positive")
    k = np.asarray(k_mag, dtype=float)
    k0 = 2 * np.pi / L0
    km = 5.92 / l0
    out = 0.033 * cn2 * np.exp(-(k ** 2) / km ** 2) / (k ** 2 + k0 ** 2) ** (11.0 / 6.0)
    return out if out.ndim else float(out)


def cn2_hufnagel_valley(h, A=1.7e-14, v=21.0):
    h = np.asarray(h, dtype=float)
    out = (5.94e-53 * (v / 27.0) ** 2 * h ** 10 * np.exp(-h / 1000.0)
           + 2.7e-16 * np.exp(-h / 1500.0)
           + A * np.exp(-h / 100.0))
    return out if out.ndim else float(out)


def cn2_slcd(h):
    """Submarine Laser Communication Day profile (piecewise power law)."""
    h = np.asarray(h, dtype=float)
    out = np.zeros_like(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = (h > 19) & (h < 230)
        b2 = (h >= 230) & (h < 850)
        b3 = (h >= 850) & (h < 7000)
        b4 = (h >= 7000) & (h < 20000)
        out = np.where(b1, 4.008e-13 * h ** -1.054, out)
        out = np.where(b2, 1.3e-15, out)
        out = np.where(b3, 6.352e-7 * h ** -2.966, out)
        out = np.where(b4, 6.209e-16 * h ** -0.6229, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Cn2Profile:
    """Cn² along the path.

    kind is one of "constant", "hufnagel_valley", "slcd", "tabulated".
    For the altitude models the path position z is used as altitude.
    """

    kind: str = "constant"
    c: float = 1e-15
    A: float = 1.7e-14
    v: float = 21.0
    z_knots: tuple = ()
    c_knots: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "hufnagel_valley", "slcd", "tabulated"):
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if self.kind == "constant" and self.c < 0:
            raise ConfigError("Cn2 must be nonnegative")
        if self.kind == "tabulated":
            z = np.asarray(self.z_knots, float)
            c = np.asarray(self.c_knots, float)
            if z.size < 2 or z.shape != c.shape:
                raise ConfigError("tabulated profile needs matching knots (>= 2)")
            if np.any(np.diff(z) <= 0):
                raise ConfigError("tabulated knots must be strictly increasing")
            if np.any(c < 0):
                raise ConfigError("Cn2 must be nonnegative")

    @classmethod
    def constant(cls, c):
        return cls("constant", c=float(c))

    @classmethod
    def tabulated(cls, z, c):
        return cls("tabulated", z_knots=tuple(map(float, z)), c_knots=tuple(map(float, c)))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            out = np.full_like(z, self.c)
        elif self.kind == "hufnagel_valley":
            out = np.asarray(cn2_hufnagel_valley(z, self.A, self.v))
        elif self.kind == "slcd":
            out = np.asarray(cn2_slcd(z))
        else:
            out = np.interp(z, self.z_knots, self.c_knots, left=0.0, right=0.0)
        return out if out.ndim else float(out)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def integrate(self, L, weight=None, z0=0.0):
        """∫_z0^L weight(z) Cn²(z) dz.

        Tabulated profiles use the trapezoid rule on their knots (clipped to
        [0, L]); analytic profiles use adaptive quadrature.
        """
        w = weight if weight is not None else (lambda z: np.ones_like(np.asarray(z, float)))
        if self.kind == "constant" and weight is None:
            return self.c * (L - z0)
        if self.kind == "tabulated":
            z = np.asarray(self.z_knots, float)
            z = z[(z >= z0) & (z <= L)]
            z = np.unique(np.concatenate([[z0, L], z]))
            return float(np.trapezoid(w(z) * self(z), z))
        pts = [b for b in _SLCD_BREAKS if z0 < b < L] if self.kind == "slcd" else None
        val, _ = integrate.quad(lambda z: float(w(z) * self(z)), z0, L,
                                epsrel=_RTOL, epsabs=0.0, limit=400, points=pts)
        return val


@dataclass(frozen=True)
class OpticalConfig:
    """Wavelength, aperture, path and turbulence; source of all derived statistics.

    Lengths are meters. N and dx describe the propagation grid; dx = 0 means
    "use the Voelz spacing with s = 4".
    """

    wavelength: float = 525e-9
    D: float = 0.2034
    L: float = 7000.0
    profile: Cn2Profile = field(default_factory=lambda: Cn2Profile.constant(1e-15))
    wave_kind: str = "spherical"
    N: int = 128
    dx: float = 0.0

    def __post_init__(self):
        for name in ("wavelength", "D", "L"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.dx < 0:
            raise ConfigError("dx must be positive (or 0 for automatic)")
        if self.wave_kind not in ("plane", "spherical"):
            raise ConfigError(f"unknown wave kind {self.wave_kind!r}")

    @property
    def k(self):
        return 2 * np.pi / self.wavelength

    @property
    def grid_dx(self):
        return self.dx if self.dx > 0 else self.wavelength * self.L / (4 * self.D)

    @property
    def r0(self):
        return fried_parameter(self)

    @property
    def D_over_r0(self):
        return self.D / self.r0

    @property
    def pixel_pitch(self):
        """Nyquist object-plane pixel pitch λL/(2D)."""
        return self.wavelength * self.L / (2 * self.D)

    def with_(self, **kw):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return OpticalConfig(**d)


def _fried_from_integral(k, integral):
    if integral <= 0:
        return math.inf
    return 0.185 * (4 * np.pi ** 2 / (k ** 2 * integral)) ** 0.6


def fried_parameter(cfg):
    """Fried parameter r0 [m]; math.inf for a turbulence-free path."""
    if cfg.wave_kind == "plane":
        integral = cfg.profile.integrate(cfg.L)
    else:
        L = cfg.L
        integral = cfg.profile.integrate(L, lambda z: ((L - np.asarray(z, float)) / L) ** (5.0 / 3.0))
    return _fried_from_integral(cfg.k, integral)


def isoplanatic_angle(cfg):
    """θ0 = 58.1e-3 λ^(6/5) [∫ z^(5/3) Cn² dz]^(-3/5), z from the aperture."""
    integral = cfg.profile.integrate(cfg.L, lambda z: np.asarray(z, float) ** (5.0 / 3.0))
    if integral <= 0:
        return math.inf
    return 58.1e-3 * cfg.wavelength ** 1.2 * integral ** -0.6


def phase_structure_function(r, r0):
    r = np.asarray(r, dtype=float)
    out = 6.88 * (r / r0) ** (5.0 / 3.0)
    return out if out.ndim else float(out)


def refractive_structure_function(r, cn2):
    r = np.asarray(r, dtype=float)
    out = cn2 * r ** (2.0 / 3.0)
    return out if out.ndim else float(out)


def layer_phase_structure_function(r, k, L, cn2):
    """Single homogeneous layer: 2.91 k² L Cn² r^(5/3)."""
    r = np.asarray(r, dtype=float)
    out = 2.91 * k ** 2 * L * cn2 * r ** (5.0 / 3.0)
    return out if out.ndim else float(out)


def le_otf(f_mag, wavelength, z, r0):
    """Long-exposure atmospheric OTF exp(-3.44 (λ z f / r0)^(5/3))."""
    f = np.asarray(f_mag, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    out = np.exp(-3.44 * (wavelength * z * f / r0) ** (5.0 / 3.0))
    return out if out.ndim else float(out)


def se_otf(f_mag, wavelength, z, r0, D):
    """Short-exposure (tilt-removed, near-field) atmospheric OTF.

    The factor (1 - (λzf/D)^(1/3)) goes negative above λzf = D; it is clamped
    at 0 there and a ValidityWarning is raised.
    """
    f = np.asarray(f_mag, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    x = wavelength * z * f
    fac = 1.0 - (x / D) ** (1.0 / 3.0)
    if np.any(fac < 0):
        warnings.warn("short-exposure OTF evaluated above λzf = D; factor clamped", ValidityWarning)
        fac = np.maximum(fac, 0.0)
    out = np.exp(-3.44 * (x / r0) ** (5.0 / 3.0) * fac)
    return out if out.ndim else float(out)


def lucky_probability(D_over_r0):
    """Probability of a lucky short exposure, 5.6 exp(-0.1557 (D/r0)²).

    Valid for D/r0 >= 3.5; smaller arguments still return the formula value
    but raise a ValidityWarning.
    """
    x = np.asarray(D_over_r0, dtype=float)
    if np.any(x < 3.5):
        warnings.warn("lucky probability formula used below D/r0 = 3.5", ValidityWarning)
    out = 5.6 * np.exp(-0.1557 * x ** 2)
    return out if out.ndim else float(out)
