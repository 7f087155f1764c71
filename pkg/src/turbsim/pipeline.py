"""End-to-end frame simulators built from the module pieces."""

from dataclasses import dataclass

import numpy as np

from ._util import ConfigError
from .psfbasis import approx_sv_convolve, beta_field_from_coeffs, beta_field_p2s
from .restore import TiltMap, apply_tilt
from .splitstep import plan_for_image, simulate_image
from .zfield import sample_zernike_space


@dataclass
class ZernikeFrame:
    image: np.ndarray
    coeffs: np.ndarray       # H×W×n_modes Zernike field
    tilt: TiltMap
    beta: np.ndarray         # H×W×M basis weights


def zernike_frame(ideal, cfg, basis, seed=0, frame=0, beta_path="projection", model=None,
                  boundary="zero", max_tilt=32.0, pad=4):
    """One turbulent frame by the propagation-free route.

    Sample the Zernike field, warp the scene by the tilt modes, map the
    high-order modes to basis weights (direct projection of the formed PSF,
    or the P2S regressor) and blur with the approximate scattering
    convolution.
    """
    ideal = np.asarray(ideal, float)
    H, W = ideal.shape
    n = basis.config.n_modes
    field = sample_zernike_space(cfg, n, H, W, seed, (frame,), pad=pad)
    tilt = TiltMap.from_zernike(field.a, max_tilt)
    warped = apply_tilt(ideal, tilt)
    if beta_path == "projection":
        beta = beta_field_from_coeffs(field.a, basis)
    elif beta_path == "p2s":
        if model is None:
            raise ConfigError("beta_path 'p2s' needs a trained model")
        beta = beta_field_p2s(field.a, model)
    else:
        raise ConfigError(f"unknown beta path {beta_path!r}")
    return ZernikeFrame(approx_sv_convolve(warped, beta, basis, boundary), field.a, tilt, beta)


def splitstep_frame(ideal, cfg, seed=0, frame=0, stride=1, M=10, kernel_size=33,
                    boundary="zero", subharmonic_levels=3):
    """One turbulent frame by per-point split-step propagation (PSFs every `stride` pixels)."""
    ideal = np.asarray(ideal, float)
    plan, pixels = plan_for_image(cfg, ideal.shape, stride, M=M, seed=seed, trial=frame,
                                  kernel_size=kernel_size, subharmonic_levels=subharmonic_levels)
    img, grid = simulate_image(plan, ideal, pixels, boundary)
    return img, grid
