#!/usr/bin/env python3
"""Simulate one protocol in two fresh processes and compare the History bytes."""

import argparse
import subprocess
import sys
import tempfile
from pathlib import Path

from dedalus_opt.corpus import ROOT


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("protocol", nargs="?", default="paxos")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    cfg = ROOT / "configs" / f"{args.protocol}.run.json"
    blobs = []
    with tempfile.TemporaryDirectory() as d:
        for i in range(2):
            out = Path(d) / str(i)
            cmd = [sys.executable, "-m", "dedalus_opt.cli", "simulate", "--config", str(cfg), "--seed", str(args.seed), "--out-dir", str(out)]
            subprocess.run(cmd, check=True, capture_output=True)
            blobs.append((out / f"history-seed{args.seed}.txt").read_bytes())
    same = blobs[0] == blobs[1]
    print(f"{args.protocol} seed {args.seed}: {len(blobs[0])} bytes, {'identical' if same else 'DIFFERENT'}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
