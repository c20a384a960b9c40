"""Per-model BER table for the cached desk suite under both output modes.

    python3 scripts/suite_report.py --cache .fitprint-cache --csv suite.csv
"""

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from fitprint import experiments as E
from fitprint import fingerprint as FP
from fitprint import models as M


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache", default=".fitprint-cache")
    parser.add_argument("--csv", default=None)
    args = parser.parse_args()

    desk = E.Desk(E.DeskConfig(cache_dir=args.cache))
    pkg = desk.modeldiff_package()
    label_pkg = replace(pkg, mapping=replace(pkg.mapping, label_only=True))
    tau = desk.tau
    test = desk.data[1]
    models = {"source": desk.source, **desk.reused(), **desk.independents()}

    plus = pkg.target.bits > 0
    rows = []
    for name, model in models.items():
        wrong = np.sign(FP.evaluate_fingerprint(model.predict, pkg)) != pkg.target.bits
        ber = float(wrong.mean())
        label_ber = FP.package_ber(model, label_pkg) if model.num_classes == desk.source.num_classes else float("nan")
        acc = M.evaluate(model, test) if model.num_classes == desk.source.num_classes else float("nan")
        rows.append({"model": name, "ber": ber, "plus_err": float(wrong[plus].mean()),
                     "minus_err": float(wrong[~plus].mean()), "label_only_ber": label_ber, "accuracy": acc,
                     "verified": ber <= tau, "required": name in E.REQUIRED_REUSED})

    print(f"tau = {tau:.4f}, perturbation l2 = {pkg.perturbation_norm():.4f}")
    print(f"{'model':<20} {'ber':>7} {'+1 err':>7} {'-1 err':>7} {'label':>7} {'acc':>7}  verified")
    for r in rows:
        print(f"{r['model']:<20} {r['ber']:7.3f} {r['plus_err']:7.3f} {r['minus_err']:7.3f} {r['label_only_ber']:7.3f} {r['accuracy']:7.3f}  {r['verified']}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
