"""Classical restoration: tilt and blur operators and their ordering, lucky
imaging (sharpness, reference frames, fusion, lucky events), and blind
deconvolution with the PCA kernel prior."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from ._util import ConfigError
from .optics import sv_convolve_scatter
from .psfbasis import reconstruct
from .zernike import sample_intermodal


# ----------------------------------------------------------------- data types

@dataclass
class FrameStack:
    frames: np.ndarray        # (T, H, W)

    def __post_init__(self):
        f = np.asarray(self.frames, float)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3 or len(f) < 1:
            raise ConfigError("a frame stack is T×H×W with T >= 1")
        self.frames = f

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames.shape[1:]

    def patch(self, center, size, t=None):
        """Patch(es) of side `size` whose top-left is center - size//2."""
        r, c = center
        a, b = r - size // 2, c - size // 2
        H, W = self.shape
        if a < 0 or b < 0 or a + size > H or b + size > W:
            raise ConfigError("patch outside the frame")
        f = self.frames if t is None else self.frames[t]
        return f[..., a:a + size, b:b + size]


DEFAULT_MAX_TILT = 32.0


@dataclass
class TiltMap:
    """Per-pixel displacement (dy, dx) in pixels, shape (H, W, 2)."""

    d: np.ndarray
    max_disp: float = DEFAULT_MAX_TILT

    def __post_init__(self):
        d = np.asarray(self.d, float)
        if d.ndim != 3 or d.shape[-1] != 2:
            raise ConfigError("tilt map must be H×W×2")
        if not np.all(np.isfinite(d)):
            raise ConfigError("tilt map must be finite")
        if np.max(np.abs(d), initial=0.0) > self.max_disp:
            raise ConfigError(f"tilt exceeds the declared bound {self.max_disp} px")
        self.d = d

    @classmethod
    def uniform(cls, shape, dy, dx, max_disp=DEFAULT_MAX_TILT):
        d = np.zeros(tuple(shape) + (2,))
        d[..., 0], d[..., 1] = dy, dx
        return cls(d, max_disp)

    @classmethod
    def from_zernike(cls, a_field, max_disp=DEFAULT_MAX_TILT):
        """Tilt coefficients to displacements: (4/π)·a in Nyquist pixels.

        Z_2 is the x tilt and Z_3 the y tilt; a positive coefficient moves
        the image towards +x / +y.
        """
        a = np.asarray(a_field, float)
        d = np.stack([a[..., 2], a[..., 1]], axis=-1) * (4.0 / np.pi)
        return cls(d, max_disp)


# ------------------------------------------------------------ tilt and blur

def _splat_targets(shape, tilt):
    H, W = shape
    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    y = rr + tilt.d[..., 0]
    x = cc + tilt.d[..., 1]
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    fy, fx = y - y0, x - x0
    for dy, dx, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                      (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yield y0 + dy, x0 + dx, w


def apply_tilt(image, tilt):
    """Forward warp: each pixel's value is splatted bilinearly at its displaced position.

    The four splat weights sum to one, so intensity is conserved except for
    mass pushed outside the frame.
    """
    image = np.asarray(image, float)
    H, W = image.shape
    if tilt.d.shape[:2] != (H, W):
        raise ConfigError("tilt map and image shapes differ")
    out = np.zeros(H * W)
    for ty, tx, w in _splat_targets((H, W), tilt):
        ok = (ty >= 0) & (ty < H) & (tx >= 0) & (tx < W) & (w != 0)
        out += np.bincount((ty * W + tx)[ok], weights=(w * image)[ok], minlength=H * W)
    return out.reshape(H, W)


def apply_blur(image, kernels, boundary="zero"):
    """Scattering blur with per-pixel kernels (H, W, K, K) or one shared kernel."""
    return sv_convolve_scatter(image, kernels, boundary)


def tilt_matrix(shape, tilt):
    """Explicit HW×HW matrix T of apply_tilt (column j = splat of pixel j)."""
    H, W = shape
    n = H * W
    T = np.zeros((n, n))
    src = np.arange(n).reshape(H, W)
    for ty, tx, w in _splat_targets(shape, tilt):
        ok = (ty >= 0) & (ty < H) & (tx >= 0) & (tx < W) & (w != 0)
        np.add.at(T, ((ty * W + tx)[ok], src[ok]), w[ok])
    return T


def blur_matrix(shape, kernels):
    """Explicit HW×HW matrix B of the scattering blur (zero boundary)."""
    H, W = shape
    n = H * W
    B = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        B[:, j] = apply_blur(e.reshape(H, W), kernels).ravel()
    return B


def turbulence_matrix(shape, tilt, kernels):
    """Composed operator H for integer tilts: pixel j moves to its destination
    and is spread by the kernel that belongs to that destination.

    This is the tilt-then-blur imaging model written column by column
    without forming T or B.
    """
    H, W = shape
    n = H * W
    d = np.rint(tilt.d).astype(int)
    if not np.allclose(d, tilt.d):
        raise ConfigError("turbulence_matrix needs integer tilts")
    Hm = np.zeros((n, n))
    K = np.asarray(kernels, float)
    ks = np.broadcast_to(K, (H, W) + K.shape[-2:]) if K.ndim == 2 else K
    kc = ks.shape[-1] // 2
    for r in range(H):
        for c in range(W):
            r2, c2 = r + d[r, c, 0], c + d[r, c, 1]
            if not (0 <= r2 < H and 0 <= c2 < W):
                continue
            k = ks[r2, c2]
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    y, x = r2 + a - kc, c2 + b - kc
                    if 0 <= y < H and 0 <= x < W:
                        Hm[y * W + x, r * W + c] += k[a, b]
    return Hm


def tilt_spread(tilt, kernel):
    """Kernel-weighted RMS tilt difference sqrt(Σ_k h(k)|t(x) - t(x-k)|²) per pixel."""
    K = kernel.shape[0]
    c = K // 2
    d = np.pad(tilt.d, ((c, c), (c, c), (0, 0)), mode="edge")
    H, W = tilt.d.shape[:2]
    acc = np.zeros((H, W))
    for a in range(K):
        for b in range(K):
            if kernel[a, b] == 0:
                continue
            # source pixel x - k with k = (a - c, b - c)
            sh = d[2 * c - a: 2 * c - a + H, 2 * c - b: 2 * c - b + W]
            acc += kernel[a, b] * np.sum((tilt.d - sh) ** 2, axis=-1)
    return np.sqrt(acc)


# -------------------------------------------------------------- sharpness

def sharpness_tv(patch):
    """Anisotropic TV₁ with forward differences and a replicated last row/column."""
    p = np.asarray(patch, float)
    if p.size == 0:
        raise ConfigError("empty patch")
    return float(np.abs(np.diff(p, axis=-1)).sum() + np.abs(np.diff(p, axis=-2)).sum())


def sharpness_var(patch):
    p = np.asarray(patch, float)
    if p.size == 0:
        raise ConfigError("empty patch")
    return float(p.var())


def _tv_batch(p):
    return np.abs(np.diff(p, axis=-1)).sum(axis=(-2, -1)) + np.abs(np.diff(p, axis=-2)).sum(axis=(-2, -1))


# ---------------------------------------------------------- patch machinery

def patch_grid(shape, size, stride):
    """Top-left corners of patches covering the frame; the last row/column touches the edge."""
    H, W = shape
    if size > H or size > W:
        raise ConfigError("patch larger than the frame")
    if stride < 1:
        raise ConfigError("stride must be >= 1")

    def axis(n):
        s = list(range(0, n - size + 1, stride))
        if s[-1] != n - size:
            s.append(n - size)
        return s
    return [(r, c) for r in axis(H) for c in axis(W)]


def _assemble(patches, corners, shape, size):
    out = np.zeros(shape)
    cnt = np.zeros(shape)
    for p, (r, c) in zip(patches, corners):
        out[r:r + size, c:c + size] += p
        cnt[r:r + size, c:c + size] += 1
    return out / cnt


# --------------------------------------------------------- reference frames

def reference_frame(stack, method="temporal_mean", patch=16, stride=8, search=2,
                    anchor=None, beta=None):
    """Temporal mean, or a space-time nonlocal average around an anchor frame.

    nonlocal: for each anchor patch and each frame, the distance is the
    smallest squared difference over spatial offsets within ±search pixels;
    the best-matching patches are averaged with weights exp(-β·δ). By
    default δ is first reduced by the 2σ²p² a pure-noise match costs and β
    is 1/(σ²p²), with the noise σ estimated robustly from frame
    differences (floored at 1e-3 of the data range).
    """
    if not isinstance(stack, FrameStack):
        stack = FrameStack(stack)
    F = stack.frames
    if method == "temporal_mean":
        return F.mean(axis=0)
    if method != "nonlocal":
        raise ConfigError(f"unknown reference method {method!r}")
    T = len(F)
    if T < 2:
        raise ConfigError("nonlocal reference needs at least two frames")
    H, W = stack.shape
    t0 = T // 2 if anchor is None else int(anchor)
    corners = patch_grid((H, W), patch, stride)
    dists = np.empty((len(corners), T))
    best = np.empty((len(corners), T, patch, patch))
    offs = [(dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)]
    for n, (r, c) in enumerate(corners):
        ref = F[t0, r:r + patch, c:c + patch]
        dmin = np.full(T, np.inf)
        for dy, dx in offs:
            a, b = r + dy, c + dx
            if a < 0 or b < 0 or a + patch > H or b + patch > W:
                continue
            cand = F[:, a:a + patch, b:b + patch]
            d = np.sum((cand - ref) ** 2, axis=(-2, -1))
            upd = d < dmin
            dmin[upd] = d[upd]
            best[n, upd] = cand[upd]
        dists[n] = dmin
    if beta is None:
        sigma = max(noise_sigma(F), 1e-3 * (float(np.ptp(F)) or 1.0))
        npix = patch * patch
        dists = np.maximum(dists - 2 * sigma * sigma * npix, 0.0)
        beta = 1.0 / (sigma * sigma * npix)
    logw = -beta * dists
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    patches = np.einsum("nt,ntij->nij", w, best)
    return _assemble(patches, corners, (H, W), patch)


def noise_sigma(frames):
    """Per-pixel noise σ from the MAD of successive-frame differences.

    Moving content touches few pixels, so the median ignores it.
    """
    F = np.asarray(frames, float)
    if len(F) < 2:
        return 0.0
    d = np.diff(F, axis=0).ravel()
    return float(np.median(np.abs(d - np.median(d))) * 1.4826 / np.sqrt(2))


# ------------------------------------------------------------------ fusion

@dataclass
class FusionResult:
    image: np.ndarray
    alpha1: float
    alpha2: float
    degenerate: list = field(default_factory=list)    # patch corners that fell back
    weights: np.ndarray = None                        # (n_patches, T)


def _robust_scale(v):
    v = np.asarray(v, float).ravel()
    mad = np.median(np.abs(v - np.median(v))) * 1.4826
    return mad if mad > 0 else (v.std() if v.std() > 0 else 1.0)


def lucky_fuse(stack, ref, alpha1=None, alpha2=None, patch=16, stride=8):
    """Per-patch weighted temporal average with w = exp(-α1‖P - P_ref‖² + α2 TV₁(P)).

    Defaults put both exponents on a unit scale: α = 1/robust spread (MAD)
    of the corresponding term over all patches and frames, so a single
    outlier frame cannot inflate the scale. Weights are normalized in the
    log domain; a patch whose exponents are all non-finite or below the
    float range falls back to the temporal mean and is flagged.
    """
    if not isinstance(stack, FrameStack):
        stack = FrameStack(stack)
    F = stack.frames
    ref = np.asarray(ref, float)
    if ref.shape != stack.shape:
        raise ConfigError("reference and frames differ in shape")
    corners = patch_grid(stack.shape, patch, stride)
    P = np.stack([F[:, r:r + patch, c:c + patch] for r, c in corners])   # (n, T, p, p)
    R = np.stack([ref[r:r + patch, c:c + patch] for r, c in corners])
    dev = np.sum((P - R[:, None]) ** 2, axis=(-2, -1))
    tv = _tv_batch(P)
    a1 = 1.0 / _robust_scale(dev) if alpha1 is None else float(alpha1)
    a2 = 1.0 / _robust_scale(tv) if alpha2 is None else float(alpha2)
    expo = -a1 * dev + a2 * tv
    degenerate = []
    w = np.empty_like(expo)
    for n in range(len(corners)):
        e = expo[n]
        if not np.all(np.isfinite(e)) or e.max() < -700:
            w[n] = 1.0 / len(e)
            degenerate.append(corners[n])
            continue
        z = np.exp(e - e.max())
        w[n] = z / z.sum()
    if degenerate:
        warnings.warn(f"{len(degenerate)} patch(es) fell back to the temporal mean", RuntimeWarning)
    fused = np.einsum("nt,ntij->nij", w, P)
    return FusionResult(_assemble(fused, corners, stack.shape, patch), a1, a2, degenerate, w)


# ------------------------------------------------------------- lucky events

def lucky_event(a, tau):
    """‖a_{2..N}‖² <= τ for coefficient vectors (…, N) starting at piston."""
    if not tau > 0:
        raise ConfigError("τ must be positive")
    a = np.asarray(a, float)
    out = np.sum(a[..., 1:] ** 2, axis=-1) <= tau
    return bool(out) if out.ndim == 0 else out


def lucky_rate(noll, tau, count, seed=0):
    """Monte-Carlo fraction of lucky draws from the intermodal distribution."""
    a = sample_intermodal(noll, seed, size=count)
    return float(np.mean(lucky_event(a, tau)))


# ----------------------------------------------------- blind deconvolution

class DeconvolutionError(RuntimeError):
    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


@dataclass
class DeconvResult:
    J: np.ndarray
    w: np.ndarray
    kernel: np.ndarray           # clipped, renormalized mean + Σ w φ
    objective: list
    clipped_mass: float


def _conv(x, k):
    return signal.fftconvolve(x, k, mode="same")


def _corr(x, k):
    return signal.fftconvolve(x, k[::-1, ::-1], mode="same")


def _tv_smooth(J, eps):
    gx = np.diff(J, axis=1, append=J[:, -1:])
    gy = np.diff(J, axis=0, append=J[-1:, :])
    return float(np.sum(np.sqrt(gx * gx + eps * eps) + np.sqrt(gy * gy + eps * eps)))


def _tv_smooth_grad(J, eps):
    gx = np.diff(J, axis=1, append=J[:, -1:])
    gy = np.diff(J, axis=0, append=J[-1:, :])
    px = gx / np.sqrt(gx * gx + eps * eps)
    py = gy / np.sqrt(gy * gy + eps * eps)
    px[:, -1] = 0.0
    py[-1, :] = 0.0
    # adjoint of the forward difference with replicated last sample
    gxT = -np.diff(px, axis=1, prepend=0.0)
    gyT = -np.diff(py, axis=0, prepend=0.0)
    return gxT + gyT


def _h(w, basis):
    return reconstruct(w, basis)


@dataclass(frozen=True)
class DeconvConfig:
    lam: float = 1e-4           # TV weight, per pixel, image in [0, 1] units
    gamma: float = 1e-8         # kernel sparsity weight
    eps: float = 1e-2           # TV smoothing
    outer: int = 30
    j_iters: int = 100
    w_iters: int = 50
    slack: float = 1e-9


def deconv_objective(I, J, w, basis, cfg):
    P = I.size
    h = _h(w, basis)
    r = I - _conv(J, h)
    return (0.5 * np.sum(r * r) / P + cfg.lam * _tv_smooth(J, cfg.eps) / P
            + cfg.gamma * np.sum(np.abs(w) / basis.sigma))


def _j_step(I, J, h, cfg, scale):
    P = I.size
    L = (np.sum(np.abs(h)) ** 2 + 8 * cfg.lam / cfg.eps) / P
    step = scale / L
    for _ in range(cfg.j_iters):
        r = _conv(J, h) - I
        g = _corr(r, h) / P + cfg.lam * _tv_smooth_grad(J, cfg.eps) / P
        J = J - step * g
    return J


def _w_matrix(J, basis):
    return np.stack([_conv(J, k).ravel() for k in basis.kernels], axis=1)


def _w_step(I, J, w, basis, cfg):
    P = I.size
    A = _w_matrix(J, basis)
    b = (I - _conv(J, basis.mean)).ravel()
    L = np.linalg.norm(A, 2) ** 2 / P
    if L == 0:
        return w
    step = 1.0 / L
    thr = step * cfg.gamma / basis.sigma
    for _ in range(cfg.w_iters):
        g = A.T @ (A @ w - b) / P
        z = w - step * g
        w = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
    return w


def blind_deconvolve(I_lucky, basis, cfg=DeconvConfig(), w0=None, J0=None):
    """Alternating minimization of
    ½‖I - h(w)⊛J‖²/P + λ TV_ε(J)/P + γ Σ|w_ℓ|/σ_ℓ,  h(w) = mean + Σ w_ℓ φ_ℓ.

    J-step: gradient descent with the Lipschitz step on the smoothed TV
    objective. w-step: ISTA with per-mode thresholds γ/σ_ℓ. Each outer
    iteration must not raise the objective by more than cfg.slack; on a rise
    the J step is halved and the iteration retried, and the third failed
    retry aborts with the last accepted state attached to the error.
    """
    I = np.asarray(I_lucky, float)
    if I.ndim != 2:
        raise ConfigError("grayscale image expected")
    w = np.zeros(basis.M) if w0 is None else np.asarray(w0, float).copy()
    J = I.copy() if J0 is None else np.asarray(J0, float).copy()
    hist = [deconv_objective(I, J, w, basis, cfg)]
    for it in range(cfg.outer):
        scale = 1.0
        for attempt in range(4):
            Jn = _j_step(I, J, _h(w, basis), cfg, scale)
            wn = _w_step(I, Jn, w, basis, cfg)
            f = deconv_objective(I, Jn, wn, basis, cfg)
            if f <= hist[-1] + cfg.slack:
                break
            scale *= 0.5
        else:
            raise DeconvolutionError(
                f"objective rose at outer iteration {it} after three step halvings",
                {"J": J, "w": w, "objective": hist})
        J, w = Jn, wn
        hist.append(f)
    k, mass = _clip(_h(w, basis))
    return DeconvResult(J, w, k, hist, mass)


def _clip(k):
    neg = -np.minimum(k, 0).sum()
    k = np.maximum(k, 0)
    s = k.sum()
    return (k / s if s > 0 else k), float(neg / s if s > 0 else 0.0)


# ---------------------------------------------------------------- metrics

def psnr(x, ref, peak=1.0):
    mse = np.mean((np.asarray(x, float) - np.asarray(ref, float)) ** 2)
    return float("inf") if mse == 0 else float(10 * np.log10(peak * peak / mse))


def kernel_correlation(a, b):
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def edge_energy(img):
    gy, gx = np.gradient(np.asarray(img, float))
    return float(np.sum(gx * gx + gy * gy))
