#!/usr/bin/env python3
"""Apply each protocol plan and verify every applied step.

Snapshots and any counterexample bundles land under --out-dir/<protocol>.
"""

import argparse
import sys
from pathlib import Path

from dedalus_opt.cli import main as cli
from dedalus_opt.corpus import PROTOCOLS, ROOT


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("protocols", nargs="*", default=list(PROTOCOLS))
    ap.add_argument("--schedules", type=int, default=20)
    ap.add_argument("--out-dir", default="plan-runs")
    args = ap.parse_args(argv)
    rc = 0
    for name in args.protocols:
        out = Path(args.out_dir) / name
        plan = str(ROOT / "plans" / f"{name}.plan.json")
        cfg = str(ROOT / "configs" / f"{name}.run.json")
        rc = max(rc, cli(["rewrite", "--plan", plan, "--out-dir", str(out)]))
        rc = max(rc, cli(["verify", "--config", cfg, "--plan", plan, "--schedules", str(args.schedules), "--out-dir", str(out)]))
    return rc


if __name__ == "__main__":
    sys.exit(main())
