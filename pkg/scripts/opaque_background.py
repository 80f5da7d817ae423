"""Diagonal band density of the numeric opaque grid around t2 - t1 = z.

Shows where the transmitted line at z - D would sit relative to the
above-cutoff background near z, next to the closed opaque prediction.
"""

import argparse

import numpy as np

from tunnelclock.amplitude import Geometry, SourceParams
from tunnelclock.correlation import ModelConfig, band_profile, closed_delta_weight, fill_grid
from tunnelclock.scattering import BarrierProfile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mu", type=float, default=100.0)
    ap.add_argument("--D", type=float, default=1.0)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    cfg = ModelConfig(SourceParams(20.0, 0.05), Geometry(40.0), BarrierProfile.square(1.0, args.D, args.mu))
    h = 0.5
    t1 = np.arange(45.0, 55.0 + h / 2, h)
    t2 = np.arange(80.0, 100.0 + h / 2, h)
    g = fill_grid(cfg, t1, t2, "numeric", threads=args.threads)
    delays, density = band_profile(g)
    line = closed_delta_weight(np.array([50.0]), cfg, "opaque")[0]
    print(f"closed opaque line weight at t1 = 50: {line:.3e} (delay {40.0 - args.D})")
    print("delay      band density")
    for d, v in zip(delays, density):
        if abs(d - 40.0) <= 3.0:
            print(f"{d:6.2f}  {v: .3e}")


if __name__ == "__main__":
    main()
