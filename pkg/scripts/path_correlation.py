"""Tilt correlation along the path: exact cone integral vs the mid-path layer.

    python3 scripts/path_correlation.py [out.csv]

Prints both curves (unnormalized and normalized to s = 0) for the reference
optics and optionally writes them as CSV.
"""

import sys

import numpy as np

from turbsim import io
from turbsim.criteria import reference_optics
from turbsim.zfield import exact_path_corr, spatial_corr_numeric


def main(out=None):
    cfg = reference_optics()
    s = np.array([0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0])
    pts = np.stack([s, np.zeros_like(s)], axis=1)
    exact = exact_path_corr(2, 2, pts, cfg, n_z=24)
    mid = spatial_corr_numeric(2, 2, pts, cfg)
    print(f"{'s':>5} {'exact':>10} {'midpoint':>10} {'ratio':>7} {'exact/e0':>9} {'mid/m0':>7}")
    for row in zip(s, exact, mid, exact / mid, exact / exact[0], mid / mid[0]):
        print("{:5.2f} {:10.5f} {:10.5f} {:7.4f} {:9.4f} {:7.4f}".format(*row))
    print(f"s=0 ratio expected (3/8)·2^(5/3) = {3 / 8 * 2 ** (5 / 3):.5f}")
    if out:
        io.write_csv(out, ["s_over_D", "exact", "midpoint"], [s, exact, mid])


if __name__ == "__main__":
    main(*sys.argv[1:2])
