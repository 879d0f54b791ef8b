"""Adapter ablation on the action-disambiguation + multi-instance suite.

Trains MLP-only, +VTA/TVA and +HSA/VTA/TVA from the stored backbone and prints
mean J&F per variant. Results are cached in --work.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from samwise.experiments import Budget, table2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="runs/table2")
    ap.add_argument("--budget", help="JSON overrides for Budget")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    budget = Budget.from_json(args.budget) if args.budget else Budget()
    rows = table2(Path(args.work), budget, args.seed)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    for r in rows:
        w.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in r.items()})


if __name__ == "__main__":
    main()
