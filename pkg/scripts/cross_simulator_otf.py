"""Long-exposure OTF of a point source imaged by both simulators.

    python3 scripts/cross_simulator_otf.py [frames] [out_dir]

Averages `frames` 64×64 frames of a centred point from the split-step path
and from the Zernike path, and compares their radial OTFs (relative RMS
below the diffraction cutoff) with each other and with ℋ_diff·ℋ_LE.
"""

import sys
import time
import warnings

import numpy as np

from turbsim import atmosphere as atm
from turbsim import io
from turbsim.criteria import reference_optics
from turbsim.optics import diffraction_otf_circular, otf_from_psf, radial_profile
from turbsim.pipeline import splitstep_frame, zernike_frame
from turbsim.psfbasis import BasisConfig, fit_pca, generate_psf_dataset
from turbsim.verify import rms_rel


def radial_otf(img):
    return np.abs(radial_profile(np.abs(otf_from_psf(img / img.sum()))))


def main(frames=500, out="cross_sim"):
    import os
    os.makedirs(out, exist_ok=True)
    cfg = reference_optics()
    n = 64
    point = np.zeros((n, n))
    point[n // 2, n // 2] = 1.0
    t0 = time.perf_counter()
    basis = fit_pca(generate_psf_dataset(BasisConfig(K=33), 2000, (0.0, 6.0), seed=0), 100)
    print(f"basis K={basis.K} M={basis.M} in {time.perf_counter() - t0:.1f} s", flush=True)

    le_ss = np.zeros((n, n))
    le_z = np.zeros((n, n))
    t0 = time.perf_counter()
    for t in range(frames):
        img, _ = splitstep_frame(point, cfg, seed=0, frame=t, stride=n, kernel_size=33)
        le_ss += img
    print(f"split-step: {frames} frames in {time.perf_counter() - t0:.1f} s", flush=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t in range(frames):
            le_z += zernike_frame(point, cfg, basis, seed=0, frame=t).image
    print(f"zernike: {frames} frames in {time.perf_counter() - t0:.1f} s", flush=True)

    # pixel pitch λL/(2D): lag k pixels of the n-point OTF is frequency k/(n·pitch)
    k = np.arange(n // 2)
    f = k / (n * cfg.pixel_pitch)
    cut = cfg.D / (cfg.wavelength * cfg.L)
    m = f < cut
    theory = diffraction_otf_circular(f, cut / 2) * atm.le_otf(f, cfg.wavelength, cfg.L, cfg.r0)
    o_ss, o_z = radial_otf(le_ss)[: n // 2], radial_otf(le_z)[: n // 2]
    res = {"zernike_vs_splitstep": rms_rel(o_z[m], o_ss[m]),
           "splitstep_vs_theory": rms_rel(o_ss[m], theory[m]),
           "zernike_vs_theory": rms_rel(o_z[m], theory[m])}
    for name, v in res.items():
        print(f"{name}: relative RMS {v:.4f}")
    io.write_csv(os.path.join(out, "le_otf.csv"), ["f_cyc_per_m", "splitstep", "zernike", "theory"],
                 [f[m], o_ss[m], o_z[m], theory[m]])
    io.write_pgm(os.path.join(out, "le_splitstep.pgm"), le_ss)
    io.write_pgm(os.path.join(out, "le_zernike.pgm"), le_z)
    return res


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 500, sys.argv[2] if len(sys.argv) > 2 else "cross_sim")
