#!/usr/bin/env python3
"""Deterministic fuzzy-hash test corpus.

Generates the committed corpus used by the SSDeep-compatibility acceptance
test: at least 100 files spanning 0 B to 4 MiB across several content
classes (plain text, log-like text, config-like text, structured binary
records, low-entropy bytes, uniform random bytes) plus families of mutated
variants so that the pairwise score table contains nontrivial values.

Generation is fully seeded; the manifest of SHA-256 hashes committed at
``tests/data/corpus_manifest.tsv`` pins the exact bytes.  Tests regenerate
the corpus into a scratch directory and verify it against the manifest, so
corpus bytes never need to live in the repository.

Usage:
    python scripts/gen_corpus.py OUTDIR [--manifest PATH]

With --manifest, the regenerated files are verified against the given
manifest and the process exits nonzero on any mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import random
import struct
import sys
from pathlib import Path

MASTER_SEED = 0x51BEA7

WORDS = (
    "alpha array batch buffer cache cluster compile config daemon data "
    "debug device driver element encode engine error event field file "
    "filter flag frame graph group handle header heap index input job "
    "kernel label layer limit link list lock loop map memory merge "
    "message meta module mount node object offset output packet page "
    "parse patch path pipe pool port process queue range record region "
    "request result ring root route runtime sample schema scope segment "
    "sensor server service session shard signal socket source stack "
    "state stream string symbol syntax table task thread token trace "
    "track tree tuple unit user value vector window worker zone"
).split()


def _text(rng: random.Random, size: int) -> bytes:
    out = []
    total = 0
    while total < size:
        line_words = [rng.choice(WORDS) for _ in range(rng.randint(4, 12))]
        line = " ".join(line_words)
        if rng.random() < 0.1:
            line = line.capitalize() + "."
        out.append(line)
        total += len(line) + 1
    return ("\n".join(out) + "\n").encode()[:size]


def _log(rng: random.Random, size: int) -> bytes:
    out = []
    total = 0
    t = 1700000000 + rng.randrange(10_000_000)
    levels = ("INFO", "WARN", "ERROR", "DEBUG")
    while total < size:
        t += rng.randrange(1, 30)
        line = "%d %s %s: %s id=%d" % (
            t,
            rng.choice(levels),
            rng.choice(WORDS),
            " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 6))),
            rng.randrange(1 << 20),
        )
        out.append(line)
        total += len(line) + 1
    return ("\n".join(out) + "\n").encode()[:size]


def _ini(rng: random.Random, size: int) -> bytes:
    out = []
    total = 0
    while total < size:
        section = "[%s_%d]" % (rng.choice(WORDS), rng.randrange(100))
        out.append(section)
        total += len(section) + 1
        for _ in range(rng.randint(2, 8)):
            line = "%s = %s" % (rng.choice(WORDS), rng.choice(WORDS) if rng.random() < 0.5 else str(rng.randrange(10_000)))
            out.append(line)
            total += len(line) + 1
    return ("\n".join(out) + "\n").encode()[:size]


def _records(rng: random.Random, size: int) -> bytes:
    chunks = [b"RECv1\x00\x00\x00"]
    total = len(chunks[0])
    while total < size:
        payload = rng.randbytes(rng.randint(8, 72))
        rec = struct.pack("<IHH", rng.randrange(1 << 32), len(payload), rng.randrange(1 << 16)) + payload
        chunks.append(rec)
        total += len(rec)
    return b"".join(chunks)[:size]


def _lowent(rng: random.Random, size: int) -> bytes:
    alphabet = bytes(rng.randrange(256) for _ in range(4))
    out = bytearray()
    while len(out) < size:
        out += bytes([rng.choice(alphabet)]) * rng.randint(1, 40)
    return bytes(out[:size])


def _random(rng: random.Random, size: int) -> bytes:
    return rng.randbytes(size)


_KINDS = {
    "text": _text,
    "log": _log,
    "ini": _ini,
    "records": _records,
    "lowent": _lowent,
    "random": _random,
}


def _mutate(rng: random.Random, base: bytes, ops: int) -> bytes:
    data = bytearray(base)
    for _ in range(ops):
        op = rng.choice("mmid")  # point mutations twice as likely
        pos = rng.randrange(max(1, len(data)))
        if op == "m":
            data[pos] = rng.randrange(256)
        elif op == "i":
            data[pos:pos] = rng.randbytes(rng.randint(1, 300))
        else:
            del data[pos : pos + rng.randint(1, 300)]
    return bytes(data)


def build_corpus() -> dict[str, bytes]:
    """Return the full corpus as an ordered name -> bytes mapping."""
    files: dict[str, bytes] = {}
    idx = 0

    def add(stem: str, data: bytes) -> str:
        nonlocal idx
        name = "f%03d_%s" % (idx, stem)
        files[name] = data
        idx += 1
        return name

    # Edge sizes around the rolling window, block-size boundaries, and the
    # signature cap (3 * 64 = 192 bytes is where block size 3 stops filling).
    add("empty.bin", b"")
    for n in (1, 2, 3, 6, 7, 8, 63, 64, 65, 100, 191, 192, 193, 384, 385):
        rng = random.Random("%d:edge:%d" % (MASTER_SEED, n))
        kind = ("random", "text", "lowent")[n % 3]
        add("edge%d.%s" % (n, "txt" if kind == "text" else "bin"), _KINDS[kind](rng, n))

    # Small and medium singletons across all content classes.
    sizes = [
        300, 700, 1_000, 1_500, 2_000, 3_000, 4_500, 6_000, 8_000, 12_000,
        16_000, 20_000, 24_000, 28_000, 32_768, 40_000, 48_000, 60_000,
        80_000, 100_000, 150_000, 200_000, 262_144, 400_000,
    ]
    kinds = list(_KINDS)
    for j, size in enumerate(sizes):
        for k in range(2):
            kind = kinds[(j * 2 + k) % len(kinds)]
            rng = random.Random("%d:single:%d:%d" % (MASTER_SEED, j, k))
            ext = "txt" if kind in ("text", "log", "ini") else "bin"
            add("%s%d.%s" % (kind, size, ext), _KINDS[kind](rng, size))

    # Mutation families: a base file plus four variants with a few point
    # mutations, insertions, and deletions each.  These supply the corpus
    # pairs with nontrivial (neither 0 nor 100) reference scores.
    fam_specs = [
        ("text", 9_000), ("records", 15_000), ("random", 30_000),
        ("log", 50_000), ("ini", 80_000), ("records", 120_000),
        ("text", 200_000),
    ]
    for fam, (kind, size) in enumerate(fam_specs):
        rng = random.Random("%d:family:%d" % (MASTER_SEED, fam))
        base = _KINDS[kind](rng, size)
        ext = "txt" if kind in ("text", "log", "ini") else "bin"
        add("fam%d_base.%s" % (fam, ext), base)
        for v in range(4):
            vrng = random.Random("%d:family:%d:%d" % (MASTER_SEED, fam, v))
            add("fam%d_var%d.%s" % (fam, v, ext), _mutate(vrng, base, vrng.randint(1, 8)))

    # Large files up to the 4 MiB bound.
    for stem, kind, size in (
        ("large_text.txt", "text", 1 << 20),
        ("large_random.bin", "random", 2 << 20),
        ("large_lowent.bin", "lowent", 1 << 19),
        ("large_records.bin", "records", 4 << 20),
    ):
        rng = random.Random("%d:large:%s" % (MASTER_SEED, stem))
        add(stem, _KINDS[kind](rng, size))

    return files


def corpus_names() -> list[str]:
    return list(build_corpus())


def write_corpus(outdir: Path) -> dict[str, bytes]:
    outdir.mkdir(parents=True, exist_ok=True)
    files = build_corpus()
    for name, data in files.items():
        (outdir / name).write_bytes(data)
    return files


def manifest_lines(files: dict[str, bytes]) -> list[str]:
    return [
        "%s\t%d\t%s" % (name, len(data), hashlib.sha256(data).hexdigest())
        for name, data in files.items()
    ]


def verify_manifest(files: dict[str, bytes], manifest_path: Path) -> list[str]:
    """Return a list of mismatch descriptions (empty = verified)."""
    want = {}
    for line in manifest_path.read_text().splitlines():
        name, size, sha = line.split("\t")
        want[name] = (int(size), sha)
    problems = []
    if set(want) != set(files):
        problems.append(
            "file set differs: missing=%s extra=%s"
            % (sorted(set(want) - set(files)), sorted(set(files) - set(want)))
        )
    for name, data in files.items():
        if name in want and want[name] != (len(data), hashlib.sha256(data).hexdigest()):
            problems.append("content mismatch for %s" % name)
    return problems


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--manifest", type=Path, help="verify output against this manifest")
    ap.add_argument("--write-manifest", type=Path, help="write the manifest to this path")
    args = ap.parse_args(argv)

    files = write_corpus(args.outdir)
    print("wrote %d files, %d bytes total" % (len(files), sum(map(len, files.values()))))
    if args.write_manifest:
        args.write_manifest.write_text("\n".join(manifest_lines(files)) + "\n")
        print("manifest -> %s" % args.write_manifest)
    if args.manifest:
        problems = verify_manifest(files, args.manifest)
        for p in problems:
            print("MISMATCH: %s" % p, file=sys.stderr)
        return 1 if problems else 0
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
