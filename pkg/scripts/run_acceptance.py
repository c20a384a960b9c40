"""Run every acceptance criterion at desk scale and print one line per criterion.

Expensive artifacts are cached (see fitprint.experiments), so a second run
only re-evaluates. Results are also written as JSON for later comparison.

    python3 scripts/run_acceptance.py --cache .fitprint-cache --only 1 2 9 11
"""

import argparse
import json
import logging
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

from fitprint import experiments as E


def run(desk: E.Desk, only: set[int]) -> list[E.CriterionResult]:
    runners = {
        1: E.criterion_threshold,
        2: E.criterion_gradcheck,
        3: lambda: E.criterion_fixed_point(desk),
        4: lambda: E.criterion_effectiveness(desk),
        5: lambda: E.criterion_untargeted(desk),
        6: lambda: E.criterion_adaptive(desk),
        7: lambda: E.criterion_removal(desk),
        8: lambda: E.criterion_label_only(desk),
        9: E.criterion_lime_solver,
        10: lambda: E.criterion_lambda(desk),
    }
    results = []
    for number in sorted(only):
        if number == 11:
            with tempfile.TemporaryDirectory() as tmp:
                res = E.criterion_registry(tmp)
        else:
            res = runners[number]()
        print(res.line(), flush=True)
        results.append(res)
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache", default=".fitprint-cache")
    parser.add_argument("--only", type=int, nargs="*", default=list(range(1, 12)))
    parser.add_argument("--json", default=None, help="write results here")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")

    desk = E.Desk(E.DeskConfig(cache_dir=args.cache))
    results = run(desk, set(args.only))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    if args.json:
        Path(args.json).write_text(json.dumps([asdict(r) for r in results], indent=2) + "\n")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
