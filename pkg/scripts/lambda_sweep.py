"""Perturbation norm and source BER of fit-lime packages across penalty weights.

    python3 scripts/lambda_sweep.py --lams 0 0.5 1 2 5
"""

import argparse
import sys

from fitprint import experiments as E
from fitprint import fingerprint as FP


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache", default=".fitprint-cache")
    parser.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0, 5.0])
    args = parser.parse_args()

    desk = E.Desk(E.DeskConfig(cache_dir=args.cache))
    norms = []
    print(f"{'lambda':>7} {'rms l2':>8} {'max abs':>8} {'source ber':>11}")
    for lam in args.lams:
        pkg = desk.lime_package(lam)
        norm = pkg.perturbation_norm()
        norms.append(norm)
        peak = float(abs(pkg.r).max())
        print(f"{lam:7g} {norm:8.4f} {peak:8.4f} {FP.package_ber(desk.source, pkg):11.4f}")
    print(f"inversions: {E.inversions(norms)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
