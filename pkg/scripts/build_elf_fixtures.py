#!/usr/bin/env python3
"""Build the committed ELF fixture binaries and capture their oracle outputs.

For every fixture binary this script captures three oracle files next to it:

- ``<name>.comment.txt``  entries of ``readelf -p .comment`` (one per line)
- ``<name>.symbols.txt``  ``nm --defined-only --extern-only`` names, sorted
- ``<name>.strings.txt``  raw ``strings -n 4`` output

Fixtures cover: gcc and clang at several optimization levels, a C++ binary,
a shared library, a weak-symbol binary, a mixed-toolchain link, a stripped
binary (dynamic symbol table only), a binary with its .comment removed, and
two synthetic files exercising the 32-bit and big-endian ELF paths.

The binaries and oracle outputs are committed; this script documents their
provenance and regenerates them when toolchains are available.  Regeneration
may produce different bytes with different compiler versions -- the committed
oracle outputs always correspond to the committed binaries.
"""

from __future__ import annotations

import argparse
import re
import shutil
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

HELLO_C = """\
#include <stdio.h>

int shared_counter = 0;

static int helper(int x) { return x * 2 + 1; }

int compute_value(int base) { return helper(base) + shared_counter; }

int main(void) {
    shared_counter = compute_value(20);
    printf("hello fixture %d\\n", shared_counter);
    return 0;
}
"""

HELLO_CXX = """\
#include <cstdio>
#include <string>

namespace fixture {
struct Widget {
    std::string name;
    int weight;
    int heavier(int delta) const { return weight + delta; }
};
int total_weight(const Widget &w) { return w.heavier(3); }
}  // namespace fixture

int main() {
    fixture::Widget w{"gadget", 12};
    std::printf("widget %d\\n", fixture::total_weight(w));
    return 0;
}
"""

WEAK_C = """\
#include <stdio.h>

__attribute__((weak)) int tunable_limit = 64;
__attribute__((weak)) int adjust(int v) { return v + tunable_limit; }

int main(void) {
    printf("adjusted %d\\n", adjust(5));
    return 0;
}
"""

LIB_C = """\
int demo_state = 7;

static int internal_twist(int x) { return x ^ 0x55; }

int demo_transform(int x) { return internal_twist(x) + demo_state; }

int demo_reset(void) { demo_state = 0; return demo_state; }
"""

PART1_C = """\
extern int part_two(int);
int part_one(int x) { return part_two(x) + 1; }
int main(void) { return part_one(41) & 0x7f; }
"""

PART2_C = """\
int part_two(int x) { return x * 3; }
"""


def run(*cmd: str, **kw) -> subprocess.CompletedProcess:
    return subprocess.run(list(cmd), check=True, capture_output=True, text=True, **kw)


def capture_oracles(binary: Path) -> None:
    """Write the three oracle files for one fixture binary."""
    # readelf -p prints '  [ offset]  string'; absent section prints nothing
    # useful on stderr.  Entries are committed one per line, file order.
    proc = subprocess.run(
        ["readelf", "-p", ".comment", str(binary)], capture_output=True, text=True
    )
    entries = []
    for line in proc.stdout.splitlines():
        m = re.match(r"\s*\[\s*[0-9a-fx]+\]\s\s(.*)$", line)
        if m:
            entries.append(m.group(1))
    assert len(entries) == len(set(entries)), f"duplicate .comment entries in {binary}"
    binary.with_suffix(binary.suffix + ".comment.txt").write_text(
        "".join(e + "\n" for e in entries)
    )

    # nm: defined external symbols (global/weak/unique), names only, C-sorted.
    # Plain nm reads the static symbol table only; when a fixture has been
    # stripped of .symtab the extractor's contract is to read the dynamic
    # table instead, and the matching nm invocation for that is `nm -D`.
    sections = run("readelf", "-S", str(binary)).stdout
    nm_cmd = ["nm", "--defined-only", "--extern-only"]
    if ".symtab" not in sections:
        nm_cmd.append("-D")
    proc = subprocess.run(
        nm_cmd + [str(binary)],
        capture_output=True,
        text=True,
    )
    names = sorted({line.split()[-1] for line in proc.stdout.splitlines() if line.strip()})
    binary.with_suffix(binary.suffix + ".symbols.txt").write_text(
        "".join(n + "\n" for n in names)
    )

    out = run("strings", "-n", "4", str(binary)).stdout
    assert "\t" not in out, (
        f"{binary}: strings output contains a tab; the strings tool treats tab "
        "as printable while the extractor's 0x20-0x7E definition does not -- "
        "pick different fixture content"
    )
    binary.with_suffix(binary.suffix + ".strings.txt").write_text(out)


def synthesize_elf(is64: bool, big_endian: bool) -> bytes:
    """Hand-assemble a minimal relocatable ELF with .comment and .symtab.

    Exercises the 32-bit and big-endian parsing paths with files that real
    binutils tools still accept, so oracle capture works on them too.
    """
    en = ">" if big_endian else "<"
    comment = b"SyntheticCC 1.0\x00CrossBuild helper 2.1\x00"
    text = b"\x90" * 16
    shstrtab = b"\x00.text\x00.comment\x00.symtab\x00.strtab\x00.shstrtab\x00"
    strtab = b"\x00exported_entry\x00internal_helper\x00weak_hook\x00"

    def sym(name_off: int, value: int, size: int, info: int, shndx: int) -> bytes:
        if is64:
            return struct.pack(en + "IBBHQQ", name_off, info, 0, shndx, value, size)
        return struct.pack(en + "IIIBBH", name_off, value, size, info, 0, shndx)

    # bindings: 0=local, 1=global, 2=weak; type 2=func (low nibble)
    symtab = b"".join(
        [
            sym(0, 0, 0, 0, 0),                       # null symbol
            sym(1, 0, 8, (1 << 4) | 2, 1),            # exported_entry  GLOBAL, .text
            sym(16, 8, 4, (0 << 4) | 2, 1),           # internal_helper LOCAL,  .text
            sym(32, 12, 4, (2 << 4) | 2, 1),          # weak_hook       WEAK,   .text
        ]
    )

    if is64:
        ehsize, shentsize, symentsize = 64, 64, 24
        shdr_fmt = en + "IIQQQQIIQQ"
        ehdr_fmt = en + "16sHHIQQQIHHHHHH"
    else:
        ehsize, shentsize, symentsize = 52, 40, 16
        shdr_fmt = en + "IIIIIIIIII"
        ehdr_fmt = en + "16sHHIIIIIHHHHHH"

    bodies = [b"", text, comment, symtab, strtab, shstrtab]
    offsets = []
    pos = ehsize
    for body in bodies:
        offsets.append(pos)
        pos += len(body)
    shoff = pos

    name_offs = {
        "": 0,
        ".text": shstrtab.index(b".text\x00"),
        ".comment": shstrtab.index(b".comment\x00"),
        ".symtab": shstrtab.index(b".symtab\x00"),
        ".strtab": shstrtab.index(b".strtab\x00"),
        ".shstrtab": shstrtab.index(b".shstrtab\x00"),
    }
    # (name, type, flags, link, info, entsize) per section
    specs = [
        ("", 0, 0, 0, 0, 0),
        (".text", 1, 0x6, 0, 0, 0),           # PROGBITS, ALLOC|EXEC
        (".comment", 1, 0x30, 0, 0, 1),       # PROGBITS, MERGE|STRINGS
        (".symtab", 2, 0, 4, 2, symentsize),  # link=.strtab, info=first global
        (".strtab", 3, 0, 0, 0, 0),
        (".shstrtab", 3, 0, 0, 0, 0),
    ]
    shdrs = b""
    for (name, sh_type, flags, link, info, entsize), body, off in zip(specs, bodies, offsets):
        size = len(body)
        off = 0 if sh_type == 0 else off
        shdrs += struct.pack(
            shdr_fmt, name_offs[name], sh_type, flags, 0, off, size, link, info, 1, entsize
        )

    ident = bytes([0x7F, ord("E"), ord("L"), ord("F"),
                   2 if is64 else 1, 2 if big_endian else 1, 1]) + bytes(9)
    machine = 21 if big_endian else (62 if is64 else 3)  # PPC64 / x86-64 / i386
    ehdr = struct.pack(
        ehdr_fmt, ident, 1, machine, 1, 0, 0, shoff, 0,
        ehsize, 0, 0, shentsize, len(specs), len(specs) - 1,
    )
    return ehdr + b"".join(bodies) + shdrs


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    args = ap.parse_args(argv)
    outdir = args.outdir
    outdir.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as td:
        src = Path(td)
        (src / "hello.c").write_text(HELLO_C)
        (src / "hello.cc").write_text(HELLO_CXX)
        (src / "weak.c").write_text(WEAK_C)
        (src / "lib.c").write_text(LIB_C)
        (src / "part1.c").write_text(PART1_C)
        (src / "part2.c").write_text(PART2_C)

        def cc(out: str, *cmd: str) -> Path:
            target = outdir / out
            run(*cmd, str(target))
            return target

        hello = src / "hello.c"
        cc("hello_gcc_O0.bin", "gcc", "-O0", str(hello), "-o")
        cc("hello_gcc_O2.bin", "gcc", "-O2", str(hello), "-o")
        cc("hello_gcc_O3.bin", "gcc", "-O3", "-funroll-loops", str(hello), "-o")
        cc("hello_clang_O0.bin", "clang", "-O0", str(hello), "-o")
        cc("hello_clang_O2.bin", "clang", "-O2", str(hello), "-o")
        cc("widget_gxx_O2.bin", "g++", "-O2", str(src / "hello.cc"), "-o")
        cc("weak_gcc_O1.bin", "gcc", "-O1", str(src / "weak.c"), "-o")
        cc("libdemo.so", "gcc", "-O2", "-shared", "-fPIC", str(src / "lib.c"), "-o")

        # Mixed toolchain: one object from gcc, one from clang, linked together.
        run("gcc", "-O2", "-c", str(src / "part1.c"), "-o", str(src / "part1.o"))
        run("clang", "-O2", "-c", str(src / "part2.c"), "-o", str(src / "part2.o"))
        run("gcc", str(src / "part1.o"), str(src / "part2.o"), "-o",
            str(outdir / "mixed_gcc_clang.bin"))

        # Stripped: static symbol table removed, dynamic table remains.
        run("gcc", "-O2", str(hello), "-o", str(outdir / "hello_stripped.bin"))
        run("strip", "--strip-all", str(outdir / "hello_stripped.bin"))

        # Stripped shared library: .symtab gone but .dynsym still carries the
        # exported globals, so the dynamic-table fallback returns content.
        shutil.copy2(outdir / "libdemo.so", outdir / "libdemo_stripped.so")
        run("strip", "--strip-all", str(outdir / "libdemo_stripped.so"))

        # No .comment section at all.
        run("gcc", "-O2", str(hello), "-o", str(outdir / "hello_nocomment.bin"))
        run("objcopy", "--remove-section", ".comment",
            str(outdir / "hello_nocomment.bin"))

    (outdir / "synthetic_elf32_lsb.bin").write_bytes(synthesize_elf(False, False))
    (outdir / "synthetic_elf64_msb.bin").write_bytes(synthesize_elf(True, True))

    fixtures = sorted(
        p for p in outdir.iterdir()
        if p.suffix in (".bin", ".so") and not p.name.endswith(".txt")
    )
    for binary in fixtures:
        capture_oracles(binary)
    print("built %d fixtures in %s" % (len(fixtures), outdir))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
