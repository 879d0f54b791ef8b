"""HSA patch-size schedules (1/1/1, 2/2/2, 4/2/2, global) with full adapters.

Results are cached in --work.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from samwise.experiments import Budget, patch_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="runs/patch_suite")
    ap.add_argument("--budget", help="JSON overrides for Budget")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    budget = Budget.from_json(args.budget) if args.budget else Budget()
    rows = patch_suite(Path(args.work), budget, args.seed)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    for r in rows:
        w.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in r.items()})


if __name__ == "__main__":
    main()
