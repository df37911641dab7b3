#!/usr/bin/env python3
"""Capture a real /proc/self/maps snapshot plus an independently derived
expected-path list.

Runs a fresh Python child that imports numpy (to pull in a realistic pile of
shared objects) and dumps its own ``/proc/self/maps``.  The raw text is
committed verbatim as ``tests/data/maps_snapshot.txt``.  The expected mapped
file list in ``tests/data/maps_snapshot_expected.txt`` is derived from that
text by an ``awk`` pipeline -- a separate implementation of "take the
pathname column, drop pseudo entries, de-duplicate preserving order" -- so
the committed expectation does not come from the parser under test.

Usage::

    python3 scripts/capture_maps_snapshot.py [outdir]
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

AWK = (
    'NF >= 6 { p = $6; for (i = 7; i <= NF; i++) p = p " " $i;'
    ' if (p !~ /^\\[/ && !(p in seen)) { seen[p] = 1; print p } }'
)


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "tests" / "data"
    )
    outdir.mkdir(parents=True, exist_ok=True)
    snap = subprocess.run(
        [sys.executable, "-c",
         "import numpy, sys; sys.stdout.write(open('/proc/self/maps').read())"],
        check=True, capture_output=True, text=True,
    ).stdout
    (outdir / "maps_snapshot.txt").write_text(snap)

    expected = subprocess.run(
        ["awk", AWK], input=snap, check=True, capture_output=True, text=True
    ).stdout
    (outdir / "maps_snapshot_expected.txt").write_text(expected)
    n_lines = len(snap.splitlines())
    n_paths = len(expected.splitlines())
    print(f"captured {n_lines} maps lines, {n_paths} unique mapped files")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
