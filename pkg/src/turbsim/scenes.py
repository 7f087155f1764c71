"""Synthetic test scenes used by the CLI defaults, tests and scripts."""

import numpy as np

from ._util import stream


def natural_scene(H, W, seed=0):
    """Values in [0, 1]: 1/f² texture plus a few hard-edged shapes."""
    rng = stream(seed, "scenes.natural")
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.rfftfreq(W)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f
    spec[0, 0] = 0.0
    tex = np.fft.irfft2(spec, (H, W))
    tex = (tex - tex.min()) / (np.ptp(tex) or 1.0)
    img = 0.6 * tex + 0.2
    yy, xx = np.indices((H, W))
    for _ in range(4):
        cy, cx = rng.uniform(0.15, 0.85, 2) * (H, W)
        r = rng.uniform(0.05, 0.15) * min(H, W)
        img[np.hypot(yy - cy, xx - cx) < r] = rng.uniform(0.0, 1.0)
    for _ in range(3):
        r0, c0 = (rng.uniform(0.1, 0.7, 2) * (H, W)).astype(int)
        h, w = (rng.uniform(0.08, 0.25, 2) * (H, W)).astype(int) + 1
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.0, 1.0)
    return np.clip(img, 0.0, 1.0)


def point_grid(H, W, spacing, value=1.0):
    img = np.zeros((H, W))
    off = spacing // 2
    img[off::spacing, off::spacing] = value
    return img


def moving_square(T, H, W, size=8, speed=3, background=0.2):
    """T frames of a bright square crossing the frame horizontally."""
    frames = np.full((T, H, W), background)
    r0 = H // 2 - size // 2
    for t in range(T):
        c0 = (W // 2 - size // 2 + (t - T // 2) * speed)
        c0 = int(np.clip(c0, 0, W - size))
        frames[t, r0:r0 + size, c0:c0 + size] = 1.0
    return frames
