#!/usr/bin/env python3
"""Hole-filling trace and the gradient-integrability table (alpha grid)."""

import sys

from tumorhs import cli

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out"
    sys.exit(cli.main(["focusing", "--out", out, "--assert"]))
