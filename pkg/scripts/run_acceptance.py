#!/usr/bin/env python3
"""Run the acceptance suite and print one PASS/FAIL line per criterion."""

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    cmd = [sys.executable, "-m", "pytest", "-q", "-rN", str(ROOT / "tests" / "test_acceptance.py")]
    out = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    lines = [ln for ln in out.stdout.splitlines() if " criterion " in ln and ln.startswith(("PASS", "FAIL"))]
    for ln in lines:
        print(ln)
    if not lines:
        sys.stdout.write(out.stdout + out.stderr)
    return out.returncode


if __name__ == "__main__":
    sys.exit(main())
