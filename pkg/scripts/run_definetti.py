#!/usr/bin/env python3
"""Approximation error of the finite de Finetti measure as n grows.

Thin wrapper over `nslocc definetti`; writes a CSV with one row per (n, k).

    python scripts/run_definetti.py --n 4,8,16,32 --k 0,1 --count 5000 \
        --seed 0 --out results/definetti.csv
"""

import sys

from nslocc.cli import main

if __name__ == "__main__":
    sys.exit(main(["definetti"] + sys.argv[1:]))
