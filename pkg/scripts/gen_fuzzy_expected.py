#!/usr/bin/env python3
"""Capture reference-tool expectations for the fuzzy-hash corpus.

Runs the reference SSDeep 2.14.x implementation (a small CLI built from the
unmodified upstream fuzzy.c, see README) over the deterministic corpus from
``gen_corpus.py`` and writes the committed expectation files:

- ``corpus_manifest.tsv``  name, size, sha256 (pins corpus bytes)
- ``corpus_digests.tsv``   name, reference digest
- ``corpus_scores.tsv``    i, j, reference score for every unordered pair
                           (indices into manifest order)
- ``mutation_trials.tsv``  position, new byte value, reference score of
                           base-vs-mutated for 100 seeded single-byte
                           mutations of one >=64 KiB corpus file

The oracle binary must digest a file given on the command line ("digest"
mode) and score two digests ("compare" mode); a "matrix" mode scoring a
signature list pairwise is used when available.  Set SSDEEP_ORACLE to the
binary path.

Usage:
    SSDEEP_ORACLE=/path/to/oracle python scripts/gen_fuzzy_expected.py tests/data
"""

from __future__ import annotations

import argparse
import os
import random
import subprocess
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from gen_corpus import MASTER_SEED, build_corpus, manifest_lines  # noqa: E402

LOCALITY_FILE = "f094_fam6_base.txt"  # 200 KB text file, >= 64 KiB
LOCALITY_TRIALS = 100


def oracle_digest(oracle: str, path: Path) -> str:
    out = subprocess.run(
        [oracle, "digest", str(path)], capture_output=True, text=True, check=True
    )
    return out.stdout.split("  ")[0].strip()


def oracle_compare(oracle: str, sig1: str, sig2: str) -> int:
    out = subprocess.run(
        [oracle, "compare", sig1, sig2], capture_output=True, text=True, check=True
    )
    return int(out.stdout.strip())


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--oracle", default=os.environ.get("SSDEEP_ORACLE"))
    args = ap.parse_args(argv)
    if not args.oracle:
        ap.error("oracle binary required (--oracle or SSDEEP_ORACLE)")
    args.outdir.mkdir(parents=True, exist_ok=True)

    files = build_corpus()
    names = list(files)
    (args.outdir / "corpus_manifest.tsv").write_text("\n".join(manifest_lines(files)) + "\n")

    with tempfile.TemporaryDirectory() as td:
        tdir = Path(td)
        for name, data in files.items():
            (tdir / name).write_bytes(data)

        digests = {name: oracle_digest(args.oracle, tdir / name) for name in names}
        (args.outdir / "corpus_digests.tsv").write_text(
            "".join("%s\t%s\n" % (n, digests[n]) for n in names)
        )

        # Full pairwise table via the matrix mode (one process, all pairs).
        sigfile = tdir / "sigs.txt"
        sigfile.write_text("".join(digests[n] + "\n" for n in names))
        out = subprocess.run(
            [args.oracle, "matrix", str(sigfile)], capture_output=True, text=True, check=True
        )
        score_lines = []
        nonzero = 0
        for line in out.stdout.splitlines():
            i, j, s = map(int, line.split())
            if i == j:
                continue
            if s:
                nonzero += 1
            score_lines.append("%d\t%d\t%d" % (i, j, s))
        (args.outdir / "corpus_scores.tsv").write_text("\n".join(score_lines) + "\n")

        # Locality trials: 100 seeded single-byte mutations of one file.
        base = files[LOCALITY_FILE]
        base_sig = digests[LOCALITY_FILE]
        rng = random.Random("%d:mutation-trials" % MASTER_SEED)
        trial_lines = []
        for t in range(LOCALITY_TRIALS):
            pos = rng.randrange(len(base))
            newbyte = (base[pos] + rng.randrange(1, 256)) % 256
            mutated = base[:pos] + bytes([newbyte]) + base[pos + 1 :]
            mpath = tdir / "mutated.bin"
            mpath.write_bytes(mutated)
            score = oracle_compare(args.oracle, base_sig, oracle_digest(args.oracle, mpath))
            trial_lines.append("%d\t%d\t%d" % (pos, newbyte, score))
        (args.outdir / "mutation_trials.tsv").write_text("\n".join(trial_lines) + "\n")

    print(
        "captured %d digests, %d pairs (%d nonzero), %d mutation trials -> %s"
        % (len(names), len(score_lines), nonzero, LOCALITY_TRIALS, args.outdir)
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
