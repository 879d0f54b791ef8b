"""Trigger-policy comparison on the late-appearing suite.

Trains the full adapter model and the CME, then evaluates never, gated,
always and every-fourth-frame fusion. Results are cached in --work.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from samwise.experiments import Budget, cme_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="runs/cme_suite")
    ap.add_argument("--budget", help="JSON overrides for Budget")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    budget = Budget.from_json(args.budget) if args.budget else Budget()
    rows = cme_suite(Path(args.work), budget, args.seed)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    for r in rows:
        w.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in r.items()})


if __name__ == "__main__":
    main()
