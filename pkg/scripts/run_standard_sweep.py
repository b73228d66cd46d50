#!/usr/bin/env python3
"""Run the standard 1D gamma sweep and print the headline diagnostics.

Equivalent to `tumorhs sweep --config configs/standard1d.cfg --assert`, kept
as a script so the experiment is one command away from a fresh checkout.
"""

import pathlib
import sys

from tumorhs import cli

ROOT = pathlib.Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "standard1d.cfg"

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out"
    sys.exit(cli.main(["sweep", "--config", str(CONFIG), "--out", out, "--assert"]))
