"""Zernike polynomials (Noll ordering and normalization), phase synthesis,
projection and the intermodal (Noll) covariance."""

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import gamma

from ._util import ClippingWarning, stream
from .optics import pupil_coords


@dataclass(frozen=True)
class NollIndex:
    j: int
    n: int
    m: int
    parity: str  # "cos", "sin" or "m0"


def noll_unindex(j):
    j = int(j)
    if j < 1:
        raise ValueError("Noll index starts at 1")
    n = 0
    while j > (n + 1) * (n + 2) // 2:
        n += 1
    k = j - n * (n + 1) // 2 - 1
    m = 2 * ((k + 1) // 2) if n % 2 == 0 else 2 * (k // 2) + 1
    if m == 0:
        parity = "m0"
    else:
        parity = "cos" if j % 2 == 0 else "sin"
    return NollIndex(j, n, m, parity)


def noll_index(n, m, parity=None):
    if n < 0 or m < 0 or m > n or (n - m) % 2:
        raise ValueError(f"invalid Zernike order (n={n}, m={m})")
    if parity is None:
        parity = "m0" if m == 0 else "cos"
    if (m == 0) != (parity == "m0"):
        raise ValueError("parity 'm0' is reserved for m = 0")
    for j in range(n * (n + 1) // 2 + 1, (n + 1) * (n + 2) // 2 + 1):
        t = noll_unindex(j)
        if t.m == m and t.parity == parity:
            return j
    raise ValueError("no such mode")  # pragma: no cover


@lru_cache(maxsize=None)
def _radial_coeffs(n, m):
    return [((-1) ** s * factorial(n - s)
             / (factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s)), n - 2 * s)
            for s in range((n - m) // 2 + 1)]


def radial(n, m, rho):
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for c, p in _radial_coeffs(n, m):
        out = out + c * rho ** p
    return out


def _zernike(j, rho, theta):
    t = noll_unindex(j)
    R = radial(t.n, t.m, rho)
    if t.m == 0:
        return np.sqrt(t.n + 1) * R
    ang = np.cos(t.m * theta) if t.parity == "cos" else np.sin(t.m * theta)
    return np.sqrt(2 * (t.n + 1)) * R * ang


def zernike_eval(j, rho, theta):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho > 1 + 1e-12) or np.any(rho < 0):
        raise ValueError("rho must lie in [0, 1]")
    out = _zernike(j, rho, np.asarray(theta, dtype=float))
    return out if out.ndim else float(out)


def zernike_xy(j, x, y):
    """Z_j at Cartesian points; no domain check (callers mask)."""
    return _zernike(j, np.hypot(x, y), np.arctan2(y, x))


@lru_cache(maxsize=16)
def _mode_stack(n_modes, N, diameter_samples):
    x, y = pupil_coords(N, diameter_samples)
    mask = (x * x + y * y) <= 1.0 + 1e-12
    Z = np.stack([np.where(mask, zernike_xy(j, x, y), 0.0) for j in range(1, n_modes + 1)])
    Z.setflags(write=False)
    return Z, mask


def phase_from_coeffs(a, N, diameter_samples):
    """φ = Σ a_j Z_j on the pupil disk; zero outside. a[0] is piston."""
    a = np.asarray(a, dtype=float)
    Z, _ = _mode_stack(a.shape[-1], N, diameter_samples)
    return np.tensordot(a, Z, axes=([-1], [0]))


@lru_cache(maxsize=16)
def _projector(n_modes, N, diameter_samples):
    Z, mask = _mode_stack(n_modes, N, diameter_samples)
    A = Z[:, mask]
    # Riemann inner products corrected by the discrete Gram matrix, so that
    # projection inverts synthesis exactly on the pixel lattice.
    G = A @ A.T
    P = np.linalg.solve(G, A)
    return P, mask


def project(phase, n_modes, diameter_samples):
    """Noll coefficients a_1..a_n of a pupil phase (least squares on the lattice)."""
    phase = np.asarray(phase, dtype=float)
    N = phase.shape[-1]
    P, mask = _projector(n_modes, N, diameter_samples)
    return phase[..., mask] @ P.T


def noll_covariance(i, j, D_over_r0, parity_rule=True):
    """E[a_i a_j] for Kolmogorov turbulence, scaled by (D/r0)^(5/3)."""
    if i < 2 or j < 2:
        raise ValueError("piston is excluded (i, j >= 2)")
    a, b = noll_unindex(i), noll_unindex(j)
    if a.m != b.m:
        return 0.0
    if parity_rule and (i - j) % 2:
        return 0.0
    if a.m != 0 and a.parity != b.parity:
        return 0.0
    ni, nj, m = a.n, b.n, a.m
    sign = (-1) ** ((ni + nj - 2 * m) // 2)
    val = (2.2698 * sign * np.sqrt((ni + 1) * (nj + 1))
           * gamma((ni + nj - 5.0 / 3.0) / 2)
           / (gamma((ni + nj + 23.0 / 3.0) / 2) * gamma((nj - ni + 17.0 / 3.0) / 2)
              * gamma((ni - nj + 17.0 / 3.0) / 2)))
    return float(val * D_over_r0 ** (5.0 / 3.0))


@dataclass
class NollMatrix:
    """Covariance of a_1..a_n (piston row/column zero) and its factor."""

    sigma: np.ndarray
    chol: np.ndarray
    clipped: bool = False

    @property
    def n_modes(self):
        return self.sigma.shape[0]


def noll_matrix(n_modes, D_over_r0, parity_rule=True):
    S = np.zeros((n_modes, n_modes))
    for i in range(2, n_modes + 1):
        for j in range(i, n_modes + 1):
            S[i - 1, j - 1] = S[j - 1, i - 1] = noll_covariance(i, j, D_over_r0, parity_rule)
    return NollMatrix(S, *_factor(S))


def _factor(S):
    L = np.zeros_like(S)
    if not np.any(S):
        return L, False
    sub = S[1:, 1:]
    try:
        L[1:, 1:] = np.linalg.cholesky(sub)
        return L, False
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(sub)
        warnings.warn("covariance not positive definite; negative eigenvalues clipped", ClippingWarning)
        # any lower-triangular-free square root works for sampling
        L[1:, 1:] = V * np.sqrt(np.clip(w, 0, None))
        return L, True


def sample_intermodal(noll, seed, size=None):
    """Zero-mean Gaussian coefficient vector(s) with covariance noll.sigma."""
    rng = stream(seed, "zernike.intermodal")
    shape = (noll.n_modes,) if size is None else (size, noll.n_modes)
    e = rng.standard_normal(shape)
    return e @ noll.chol.T


def tilt_to_pixels(a):
    """Tilt coefficient [rad] to image displacement in Nyquist pixels."""
    return (4.0 / np.pi) * np.asarray(a, dtype=float)
