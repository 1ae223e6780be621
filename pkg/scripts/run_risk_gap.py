#!/usr/bin/env python3
"""Collective vs measure-then-apply risk over a range of round counts.

Thin wrapper over `nslocc risk-gap`; writes a CSV with one row per n.

    python scripts/run_risk_gap.py --overlap 0.6 --n 1..4 --seed 0 \
        --out results/risk_gap.csv
"""

import sys

from nslocc.cli import main

if __name__ == "__main__":
    sys.exit(main(["risk-gap"] + sys.argv[1:]))
