"""|K(t, t1)| / peak of the no-barrier kernel as a function of s = t - t1.

Compares the measured leakage outside the light cone with the algebraic
1 / (2 pi Omega |s - z|) tail.
"""

import argparse
import math

import numpy as np

from tunnelclock.amplitude import Geometry, SourceParams, commutator_kernel
from tunnelclock.scattering import BarrierProfile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--omega", type=float, default=20.0)
    ap.add_argument("--z", type=float, default=40.0)
    args = ap.parse_args()

    src, geom = SourceParams(args.omega, 0.05), Geometry(args.z)
    t = args.z + 2 * geom.margin / args.omega + 5
    s = np.concatenate([np.linspace(0.5, args.z - 0.5, 80), np.linspace(args.z + 0.5, t - 0.5, 20)])
    k = np.array([abs(commutator_kernel(t, t - si, src, geom, BarrierProfile.empty())) for si in s])
    peak = k.max()
    print("    s      |K|/peak   1/(2 pi Omega |s - z|)")
    for si, ki in zip(s, k):
        print(f"{si:7.2f}  {ki / peak:.3e}  {1 / (2 * math.pi * args.omega * abs(si - args.z)):.3e}")


if __name__ == "__main__":
    main()
