"""PSF dictionary: tilt-free PSF datasets, a PCA basis, coefficient projection,
the scattering-form approximate spatially varying convolution, and a small
phase-to-space (P2S) regressor from Zernike coefficients to basis weights."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from ._util import ClippingWarning, ConfigError, stream
from .optics import _pad, make_pupil, psf_from_phase
from .zernike import noll_matrix, phase_from_coeffs


@dataclass(frozen=True)
class BasisConfig:
    """PSF generation settings shared by the dataset, basis and P2S stages.

    Defaults give Nyquist-sampled PSFs (oversample 2) matching the split-step
    simulator's object-pixel pitch λL/(2D).
    """

    n_modes: int = 36
    pupil_samples: int = 32
    oversample: int = 2
    energy: float = 0.999          # fraction of worst-case energy inside K×K
    K: int = 0                     # 0: choose from the dataset

    def __post_init__(self):
        if self.n_modes < 4:
            raise ConfigError("need at least the first high-order mode (n_modes >= 4)")
        if self.pupil_samples < 2 or self.oversample < 1:
            raise ConfigError("invalid pupil sampling")
        if not 0 < self.energy <= 1:
            raise ConfigError("energy fraction must lie in (0, 1]")
        if self.K and self.K % 2 == 0:
            raise ConfigError("kernel size must be odd")


def highorder_index(n_modes):
    """0-based positions of the tilt-free coefficients (piston, then modes 4..n)."""
    return np.array([0] + list(range(3, n_modes)))


def highorder(a):
    """Drop the two tilt coefficients from full Noll vectors (..., n_modes)."""
    a = np.asarray(a, float)
    return a[..., highorder_index(a.shape[-1])]


def full_from_highorder(h, n_modes):
    h = np.asarray(h, float)
    out = np.zeros(h.shape[:-1] + (n_modes,))
    out[..., highorder_index(n_modes)] = h
    return out


def psfs_from_highorder(h, bcfg, K=None):
    """Unit-sum PSFs (…, Q, Q) or K×K centre crops for tilt-free coefficient vectors."""
    h = np.asarray(h, float)
    N = bcfg.pupil_samples
    pupil = make_pupil("circle", N, N)
    a = full_from_highorder(h, bcfg.n_modes)
    flat = a.reshape(-1, bcfg.n_modes)
    out = []
    for s in range(0, len(flat), 256):
        ph = phase_from_coeffs(flat[s:s + 256], N, N)
        p = psf_from_phase(pupil, ph, bcfg.oversample)
        out.append(p if K is None else crop_center(p, K))
    out = np.concatenate(out) if out else np.zeros((0,) + ((K, K) if K else (N * bcfg.oversample,) * 2))
    return out.reshape(h.shape[:-1] + out.shape[-2:])


def crop_center(psf, K):
    Q = psf.shape[-1]
    if K > Q:
        raise ConfigError(f"kernel size {K} exceeds the PSF grid {Q}")
    a = Q // 2 - K // 2
    k = psf[..., a:a + K, a:a + K]
    return k / k.sum(axis=(-2, -1), keepdims=True)


def support_size(psfs, energy):
    """Smallest odd K whose centred K×K window holds `energy` of every PSF."""
    Q = psfs.shape[-1]
    c = Q // 2
    for K in range(1, Q + 1, 2):
        a = c - K // 2
        inside = psfs[..., a:a + K, a:a + K].sum(axis=(-2, -1))
        if np.all(inside >= energy - 1e-12):
            return K
    return Q - 1 if Q % 2 == 0 else Q


@dataclass
class PsfDataset:
    coeffs: np.ndarray      # (P, n_modes - 2) tilt-free Noll coefficients
    psfs: np.ndarray        # (P, K, K), unit sum
    dr0: np.ndarray         # (P,) D/r0 of each draw
    config: BasisConfig
    seed: int = 0

    def __len__(self):
        return len(self.psfs)

    def __iter__(self):
        return iter(zip(self.coeffs, self.psfs))

    @property
    def K(self):
        return self.psfs.shape[-1]

    def split(self, fraction):
        n = int(round(len(self) * (1 - fraction)))
        a = PsfDataset(self.coeffs[:n], self.psfs[:n], self.dr0[:n], self.config, self.seed)
        b = PsfDataset(self.coeffs[n:], self.psfs[n:], self.dr0[n:], self.config, self.seed)
        return a, b


def generate_psf_dataset(bcfg, count, dr0_range, seed=0):
    """`count` tilt-free PSFs with D/r0 uniform on dr0_range.

    Each draw is a Noll-covariance coefficient vector (modes 2..n_modes) with
    the piston and tilts then zeroed. Draw i uses its own random stream, so
    datasets are reproducible and any prefix is independent of `count`.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    lo, hi = map(float, dr0_range)
    if not 0 <= lo <= hi:
        raise ConfigError("dr0_range must satisfy 0 <= lo <= hi")
    n = bcfg.n_modes
    chol = noll_matrix(n, 1.0).chol
    dr0 = np.empty(count)
    a = np.zeros((count, n))
    for i in range(count):
        rng = stream(seed, "psfbasis.dataset", i)
        dr0[i] = rng.uniform(lo, hi)
        a[i] = chol @ rng.standard_normal(n) * dr0[i] ** (5.0 / 6.0)
    a[:, :3] = 0.0
    h = highorder(a)
    full = psfs_from_highorder(h, bcfg)
    K = bcfg.K or support_size(full, bcfg.energy)
    return PsfDataset(h, crop_center(full, K), dr0, bcfg, seed)


def second_moment_radius(psf):
    """RMS radius (pixels) of a centred kernel about its centroid."""
    psf = np.asarray(psf, float)
    K = psf.shape[-1]
    y, x = np.indices((K, K))
    s = psf.sum(axis=(-2, -1))
    cy = (psf * y).sum(axis=(-2, -1)) / s
    cx = (psf * x).sum(axis=(-2, -1)) / s
    r2 = (psf * ((y - cy[..., None, None]) ** 2 + (x - cx[..., None, None]) ** 2)).sum(axis=(-2, -1)) / s
    return np.sqrt(r2)


# ------------------------------------------------------------------ PCA basis

@dataclass
class PsfBasis:
    kernels: np.ndarray          # (M, K, K) orthonormal under the flat inner product
    mean: np.ndarray             # (K, K)
    sigma: np.ndarray            # (M,) coefficient standard deviations, > 0
    explained: np.ndarray        # (M,) cumulative explained-variance fraction
    config: BasisConfig = field(default_factory=BasisConfig)
    provenance: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.kernels.shape[0]

    @property
    def K(self):
        return self.kernels.shape[-1]

    def truncate(self, M):
        if not 1 <= M <= self.M:
            raise ConfigError(f"cannot truncate a {self.M}-mode basis to {M}")
        return PsfBasis(self.kernels[:M], self.mean, self.sigma[:M], self.explained[:M],
                        self.config, dict(self.provenance, M=M))


SIGMA_FLOOR = 1e-12


def fit_pca(dataset, M):
    """Top-M principal kernels of the mean-centred dataset PSFs."""
    P = len(dataset)
    if M < 1 or M > P:
        raise ConfigError(f"M = {M} needs 1 <= M <= dataset size ({P})")
    K = dataset.K
    if M > K * K:
        raise ConfigError(f"M = {M} exceeds the kernel dimension {K * K}")
    X = dataset.psfs.reshape(P, K * K)
    mean = X.mean(axis=0)
    Xc = X - mean
    if P > K * K:
        # fewer pixels than samples: eigen-decompose the K²×K² scatter matrix
        var, V = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(var)[::-1]
        var, V = np.clip(var[order], 0, None), V[:, order[:M]].T
    else:
        _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
        var, V = S ** 2, Vt[:M]
    # fix the sign of each component so the fit is deterministic
    V = V * np.where(V[np.arange(M), np.argmax(np.abs(V), axis=1)] < 0, -1.0, 1.0)[:, None]
    beta = Xc @ V.T
    sigma = np.maximum(beta.std(axis=0), SIGMA_FLOOR)
    total = var.sum()
    explained = np.cumsum(var[:M]) / total if total > 0 else np.ones(M)
    prov = {"n_modes": dataset.config.n_modes, "dr0_min": float(dataset.dr0.min()),
            "dr0_max": float(dataset.dr0.max()), "count": P, "M": M, "seed": dataset.seed}
    return PsfBasis(V.reshape(M, K, K), mean.reshape(K, K), sigma, explained,
                    dataset.config, prov)


def project(psf, basis):
    """β = ⟨psf - mean, φ_m⟩ for kernels (…, K, K)."""
    psf = np.asarray(psf, float)
    if psf.shape[-2:] != basis.mean.shape:
        raise ConfigError("kernel size does not match the basis")
    d = (psf - basis.mean).reshape(psf.shape[:-2] + (-1,))
    return d @ basis.kernels.reshape(basis.M, -1).T


def reconstruct(beta, basis):
    """mean + Σ β_m φ_m for coefficient arrays (…, M)."""
    beta = np.asarray(beta, float)
    flat = beta @ basis.kernels.reshape(basis.M, -1)
    return basis.mean + flat.reshape(beta.shape[:-1] + basis.mean.shape)


def clip_kernels(kernels):
    """Zero negative lobes and renormalize to unit sum.

    Returns (kernels, clipped_mass) where clipped_mass is the removed
    negative mass relative to the positive mass, per kernel.
    """
    k = np.asarray(kernels, float)
    neg = -np.minimum(k, 0).sum(axis=(-2, -1))
    k = np.maximum(k, 0)
    pos = k.sum(axis=(-2, -1), keepdims=True)
    mass = neg / np.maximum(pos[..., 0, 0], 1e-300)
    return k / np.where(pos > 0, pos, 1.0), mass


def approx_sv_convolve(image, beta_field, basis, boundary="zero"):
    """Scattering convolution with kernels h_u = mean + Σ β_m(u) φ_m.

    Computed as mean ⊛ I + Σ_m φ_m ⊛ (β_m ⊙ I): one FFT per weighted image,
    products summed in the frequency domain, one inverse transform. Equal to
    the brute-force scattering sum with the reconstructed kernels (same
    boundary handling: replicate extends both the image and β field).
    """
    image = np.asarray(image, float)
    H, W = image.shape
    beta_field = np.asarray(beta_field, float)
    if beta_field.shape != (H, W, basis.M):
        raise ConfigError(f"β field must be {H}×{W}×{basis.M}")
    K = basis.K
    c = K // 2
    p = K
    img = _pad(image, p, boundary)
    bf = np.pad(beta_field, ((p, p), (p, p), (0, 0)), mode="edge" if boundary == "replicate" else "constant")
    Hp, Wp = img.shape
    shape = sp_fft.next_fast_len(Hp + K - 1), sp_fft.next_fast_len(Wp + K - 1)
    acc = sp_fft.rfft2(img, shape) * sp_fft.rfft2(basis.mean, shape)
    for m in range(basis.M):
        acc += sp_fft.rfft2(img * bf[:, :, m], shape) * sp_fft.rfft2(basis.kernels[m], shape)
    full = sp_fft.irfft2(acc, shape)
    return full[p + c: p + c + H, p + c: p + c + W]


def beta_field_from_coeffs(a_field, basis):
    """β per pixel by direct projection of the PSF formed from each Zernike vector.

    a_field holds full Noll vectors (H, W, n_modes); tilts are ignored.
    """
    a = np.asarray(a_field, float)
    if a.shape[-1] != basis.config.n_modes:
        raise ConfigError("coefficient count does not match the basis")
    h = highorder(a).reshape(-1, basis.config.n_modes - 2)
    beta = np.empty((len(h), basis.M))
    for s in range(0, len(h), 1024):
        k = psfs_from_highorder(h[s:s + 1024], basis.config, basis.K)
        beta[s:s + 1024] = project(k, basis)
    return beta.reshape(a.shape[:-1] + (basis.M,))


def basis_kernels(beta, basis, clip=True):
    k = reconstruct(beta, basis)
    if clip:
        k, mass = clip_kernels(k)
        return k, mass
    return k, np.zeros(k.shape[:-2])


# ---------------------------------------------------------------- P2S regressor

class TrainingError(RuntimeError):
    """Raised when the regressor loss becomes non-finite."""


@dataclass(frozen=True)
class P2SHyper:
    widths: tuple = (34, 34, 100, 100)
    activation: str = "tanh"
    lr: float = 0.05
    momentum: float = 0.9
    batch: int = 64
    epochs: int = 300
    decay_every: int = 100       # lr halves every this many epochs
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("need at least input and output widths")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.batch < 1 or self.epochs < 1:
            raise ConfigError("invalid optimizer settings")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass
class P2SModel:
    weights: list                # [(W, b), ...]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    activation: str = "tanh"
    meta: dict = field(default_factory=dict)

    @property
    def widths(self):
        return tuple([self.weights[0][0].shape[0]] + [W.shape[1] for W, _ in self.weights])


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0)


def _act_grad(z, a, kind):
    return 1 - a * a if kind == "tanh" else (z > 0).astype(z.dtype)


def _forward(weights, x, kind):
    zs, acts = [], [x]
    h = x
    for n, (W, b) in enumerate(weights):
        z = h @ W + b
        zs.append(z)
        h = z if n == len(weights) - 1 else _act(z, kind)
        acts.append(h)
    return zs, acts


def _standardize(v):
    mu = v.mean(axis=0)
    sd = v.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


def relative_beta_error(pred, beta):
    """mean ‖β̂ - β‖ / mean ‖β‖."""
    return float(np.mean(np.linalg.norm(pred - beta, axis=-1)) / np.mean(np.linalg.norm(beta, axis=-1)))


def p2s_train(dataset, basis, hyper=P2SHyper()):
    """Fit the regressor a_highorder -> β = project(psf) by mini-batch SGD.

    Inputs and targets are standardized; the final fraction of the dataset is
    held out for validation. Weights depend only on hyper.seed and the data.
    """
    x = np.asarray(dataset.coeffs, float)
    y = project(dataset.psfs, basis)
    if hyper.widths[0] != x.shape[1] or hyper.widths[-1] != y.shape[1]:
        raise ConfigError(f"widths {hyper.widths} do not match data {x.shape[1]} -> {y.shape[1]}")
    n_val = max(1, int(round(len(x) * hyper.val_fraction)))
    if len(x) - n_val < 1:
        raise ConfigError("not enough samples to train")
    xt, yt, xv, yv = x[:-n_val], y[:-n_val], x[-n_val:], y[-n_val:]
    xm, xs = _standardize(xt)
    # one shared output scale: the loss then weighs components as the β-norm error does
    ym = yt.mean(axis=0)
    ys = np.full(yt.shape[1], max(float(np.sqrt(np.mean((yt - ym) ** 2))), 1e-12))
    X, Y = (xt - xm) / xs, (yt - ym) / ys

    rng = stream(hyper.seed, "psfbasis.p2s.init")
    weights = []
    for a, b in zip(hyper.widths[:-1], hyper.widths[1:]):
        W = rng.standard_normal((a, b)) * np.sqrt((1.0 if hyper.activation == "tanh" else 2.0) / a)
        weights.append((W, np.zeros(b)))
    vel = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
    history = []
    lr = hyper.lr
    for epoch in range(hyper.epochs):
        if epoch and epoch % hyper.decay_every == 0:
            lr *= 0.5
        order = stream(hyper.seed, "psfbasis.p2s.order", epoch).permutation(len(X))
        total = 0.0
        for s in range(0, len(X), hyper.batch):
            idx = order[s:s + hyper.batch]
            # divergence surfaces as a non-finite loss below, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                zs, acts = _forward(weights, X[idx], hyper.activation)
                err = acts[-1] - Y[idx]
                loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {s // hyper.batch}, "
                                    f"lr {lr:g}; last finite epoch loss "
                                    f"{history[-1] if history else float('nan'):g}")
            total += loss * len(idx)
            g = 2 * err / err.size
            for n in range(len(weights) - 1, -1, -1):
                W, b = weights[n]
                gW = acts[n].T @ g
                gb = g.sum(axis=0)
                if n:
                    g = (g @ W.T) * _act_grad(zs[n - 1], acts[n], hyper.activation)
                vW, vb = vel[n]
                vW = hyper.momentum * vW - lr * gW
                vb = hyper.momentum * vb - lr * gb
                vel[n] = (vW, vb)
                weights[n] = (W + vW, b + vb)
        history.append(total / len(X))
    model = P2SModel(weights, xm, xs, ym, ys, hyper.activation)
    val = relative_beta_error(p2s_infer(model, xv), yv)
    model.meta = {"epochs": hyper.epochs, "train_loss": history[-1], "val_rel_error": val,
                  "n_train": len(X), "n_val": n_val, "seed": hyper.seed, "lr": hyper.lr,
                  "momentum": hyper.momentum, "batch": hyper.batch}
    return model


def p2s_infer(model, a_highorder):
    """β from tilt-free coefficient vectors (…, n_in)."""
    a = np.asarray(a_highorder, float)
    shape = a.shape[:-1]
    X = (a.reshape(-1, a.shape[-1]) - model.x_mean) / model.x_scale
    _, acts = _forward(model.weights, X, model.activation)
    y = acts[-1] * model.y_scale + model.y_mean
    return y.reshape(shape + (y.shape[-1],))


def beta_field_p2s(a_field, model):
    return p2s_infer(model, highorder(a_field))


def warn_clipping(mass, limit=0.02):
    worst = float(np.max(mass)) if np.size(mass) else 0.0
    if worst > limit:
        warnings.warn(f"kernel clipping removed up to {worst:.2%} of mass", ClippingWarning)
    return worst
