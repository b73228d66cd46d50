#!/usr/bin/env python3
"""Refinement study of the reaction-free scheme against the exact
self-similar profile, gamma in {3, 5, 9}, N in {200, 400, 800}."""

import sys

from tumorhs import cli

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out"
    sys.exit(cli.main(["barenblatt-convergence", "--out", out, "--assert"]))
