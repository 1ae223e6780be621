#!/usr/bin/env python3
"""Run the built-in invariant suite and emit a JSON report.

    python scripts/run_verify.py --seed 0 --out results/verify.json

Add --inject-signalling as a negative control: the run must then fail
(exit code 1) because the planted signalling channel is detected.
"""

import sys

from nslocc.cli import main

if __name__ == "__main__":
    sys.exit(main(["verify"] + sys.argv[1:]))
