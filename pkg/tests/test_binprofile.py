"""Binary/process feature extraction tests.

Oracle provenance:
- [DERIVED] ELF fixtures: expectations captured with readelf/nm/strings
  (committed next to each fixture; see scripts/build_elf_fixtures.py).
- [DERIVED] maps snapshot: a real /proc/<pid>/maps capture with the path
  list separately derived by an awk pipeline (scripts/capture_maps_snapshot.py).
- [DERIVED] XXH3 vectors: produced by an independently compiled C harness
  against the upstream reference implementation (scripts/gen_xxh3_vectors.py).
- [TRIVIAL] everything else.
"""

from __future__ import annotations

import os
import stat as stat_mod

import pytest
import xxhash

from siren.binprofile import (
    ElfFormatError,
    FileMetadata,
    PathCategory,
    canonicalize_list,
    classify_path,
    extract_compiler_strings,
    extract_global_symbols,
    extract_printable_strings,
    parse_loaded_modules,
    parse_memory_maps,
    parse_memory_maps_with_warnings,
    path_hash,
    profile_executable,
)

FIXTURE_NAMES = [
    "hello_gcc_O0.bin", "hello_gcc_O2.bin", "hello_gcc_O3.bin",
    "hello_clang_O0.bin", "hello_clang_O2.bin",
    "hello_nocomment.bin", "hello_stripped.bin", "widget_gxx_O2.bin",
    "weak_gcc_O1.bin", "libdemo.so", "libdemo_stripped.so",
    "mixed_gcc_clang.bin", "synthetic_elf32_lsb.bin", "synthetic_elf64_msb.bin",
]


@pytest.fixture(scope="module")
def fixtures_dir(data_dir):
    return data_dir / "elf_fixtures"


def _oracle_lines(fixtures_dir, name, kind):
    text = (fixtures_dir / f"{name}.{kind}.txt").read_text()
    return text.splitlines()


def test_fixture_inventory(fixtures_dir):
    """[TRIVIAL] All fixtures and their three oracle files are present."""
    assert len(FIXTURE_NAMES) >= 10
    for name in FIXTURE_NAMES:
        assert (fixtures_dir / name).is_file(), name
        for kind in ("comment", "symbols", "strings"):
            assert (fixtures_dir / f"{name}.{kind}.txt").is_file(), (name, kind)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_compiler_strings_match_readelf(fixtures_dir, name):
    """[DERIVED] .comment extraction equals `readelf -p .comment`."""
    data = (fixtures_dir / name).read_bytes()
    assert extract_compiler_strings(data) == _oracle_lines(
        fixtures_dir, name, "comment")


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_symbols_match_nm(fixtures_dir, name):
    """[DERIVED] Defined-global symbol extraction equals sorted nm output
    (`nm --defined-only --extern-only`, `-D` for fixtures without .symtab)."""
    data = (fixtures_dir / name).read_bytes()
    assert extract_global_symbols(data) == _oracle_lines(
        fixtures_dir, name, "symbols")


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_strings_match_strings_tool(fixtures_dir, name):
    """[DERIVED] Printable-string extraction equals `strings -n 4`."""
    data = (fixtures_dir / name).read_bytes()
    assert extract_printable_strings(data) == _oracle_lines(
        fixtures_dir, name, "strings")


def test_non_elf_input_raises_and_profile_degrades(tmp_path):
    """[TRIVIAL] ELF extractors raise ElfFormatError on non-ELF bytes;
    profile_executable absorbs that into empty compiler/symbol lists."""
    for blob in (b"", b"MZ windows", b"\x7fELFbut-not-really" + b"\x00" * 64):
        with pytest.raises(ElfFormatError):
            extract_compiler_strings(blob)
        with pytest.raises(ElfFormatError):
            extract_global_symbols(blob)
    # strings extraction is byte-level, not ELF-aware
    assert extract_printable_strings(b"MZ windows") == ["MZ windows"]
    p = tmp_path / "notelf"
    p.write_bytes(b"MZ windows binary here")
    profile = profile_executable(str(p))
    assert profile.compilers == [] and profile.symbols == []
    assert "MZ windows binary here" in profile.strings


def test_printable_strings_rules():
    """[TRIVIAL] Runs of [0x20,0x7E] with length >= 4, file order."""
    blob = b"abc\x00defg\x01\x02hi jk\xfflast1"
    assert extract_printable_strings(blob) == ["defg", "hi jk", "last1"]
    assert extract_printable_strings(b"") == []
    assert extract_printable_strings(b"abc") == []
    assert extract_printable_strings(b"exactly4") == ["exactly4"]
    assert extract_printable_strings(b"\t\n tab is not printable \x7f") == \
        [" tab is not printable "]


# ----------------------------------------------------------- memory maps --

def test_maps_snapshot_matches_awk_oracle(data_dir):
    """[DERIVED] Path extraction from a real maps capture equals the
    independently derived awk expectation."""
    text = (data_dir / "maps_snapshot.txt").read_text()
    expected = (data_dir / "maps_snapshot_expected.txt").read_text().splitlines()
    paths, warnings = parse_memory_maps_with_warnings(text)
    assert warnings == 0
    assert paths == expected


def test_maps_parsing_rules():
    """[TRIVIAL] Dedup preserves first occurrence; pseudo-paths and
    pathless lines are skipped; malformed lines warn but do not raise."""
    text = "\n".join([
        "00400000-00452000 r-xp 00000000 08:02 173521 /usr/bin/dbus-daemon",
        "00e03000-00e24000 rw-p 00000000 00:00 0 [heap]",
        "7f0000000000-7f0000001000 r--p 00000000 08:02 999 /lib/libc.so.6",
        "7f0000001000-7f0000002000 r-xp 00001000 08:02 999 /lib/libc.so.6",
        "7f0000002000-7f0000003000 rw-p 00000000 00:00 0",
        "garbage line without enough fields",
        "7f0000004000-7f0000005000 r--p 00000000 08:02 999 /spaced path/lib x.so",
    ])
    paths, warnings = parse_memory_maps_with_warnings(text)
    assert paths == ["/usr/bin/dbus-daemon", "/lib/libc.so.6",
                     "/spaced path/lib x.so"]
    assert warnings == 1
    assert parse_memory_maps(text) == paths
    assert parse_memory_maps("") == []


def test_loaded_modules_parsing():
    """[TRIVIAL] Colon-separated module list, blanks dropped, order kept
    (entries are reported verbatim; no dedup)."""
    assert parse_loaded_modules("gcc/11.2:cray-mpich/8.1::netcdf") == \
        ["gcc/11.2", "cray-mpich/8.1", "netcdf"]
    assert parse_loaded_modules("") == []
    assert parse_loaded_modules(":::") == []


# -------------------------------------------------------- classification --

@pytest.mark.parametrize("path,category", [
    ("/usr/bin/gzip", PathCategory.SYSTEM),
    ("/bin/sh", PathCategory.SYSTEM),
    ("/sbin/init", PathCategory.SYSTEM),
    ("/usr/sbin/sshd", PathCategory.SYSTEM),
    ("/lib/x86_64-linux-gnu/ld-linux-x86-64.so.2", PathCategory.SYSTEM),
    ("/usr/lib64/libfoo.so", PathCategory.SYSTEM),
    ("/opt/cray/pe/bin/cc", PathCategory.SYSTEM),
    ("/etc/alternatives/editor", PathCategory.SYSTEM),
    ("/home/alice/a.out", PathCategory.USER),
    ("/scratch/project_465/lmp", PathCategory.USER),
    ("/users/bob/miniconda3/bin/solver", PathCategory.USER),
    ("/usr/bin/python3", PathCategory.PYTHON_INTERPRETER),
    ("/usr/bin/python3.10", PathCategory.PYTHON_INTERPRETER),
    ("/usr/bin/python", PathCategory.PYTHON_INTERPRETER),
    ("/usr/bin/python-config", PathCategory.SYSTEM),  # not a bare interpreter name
    ("/home/alice/venv/bin/python", PathCategory.USER),   # user-installed interpreter
    ("/home/alice/miniconda3/bin/python3.9", PathCategory.USER),
    ("/home/alice/mypython", PathCategory.USER),
])
def test_classify_path(path, category):
    """[TRIVIAL] Interpreter basenames are recognized under system prefixes
    only; user-installed interpreters stay User (they are labeled from the
    path instead); other system-prefix paths are System; the rest is User."""
    assert classify_path(path) == category


def test_classify_path_values():
    """[TRIVIAL] Category values are the wire-visible strings."""
    assert PathCategory.SYSTEM.value == "System"
    assert PathCategory.USER.value == "User"
    assert PathCategory.PYTHON_INTERPRETER.value == "PythonInterpreter"


# ----------------------------------------------------------- path hashes --

def test_path_hash_is_xxh3_of_path():
    """[DERIVED] path_hash equals the XXH3-128 hex of the UTF-8 path; the
    XXH3 implementation itself is pinned by the C-reference vectors."""
    p = "/usr/bin/gzip"
    assert path_hash(p) == xxhash.xxh3_128_hexdigest(p.encode())
    assert len(path_hash(p)) == 32


def test_xxh3_vectors_from_reference_c(data_dir):
    """[DERIVED] xxhash python binding matches the upstream C reference on
    the committed sanity-buffer vectors (seed 0, canonical byte order)."""
    rows = [line.split("\t") for line in
            (data_dir / "xxh3_vectors.tsv").read_text().splitlines()]
    assert len(rows) >= 20
    # Regenerate the sanity buffer exactly as the reference test suite does.
    max_len = max(int(r[0]) for r in rows)
    byte_gen = 2654435761
    buf = bytearray()
    for _ in range(max_len):
        buf.append((byte_gen >> 56) & 0xFF)
        byte_gen = (byte_gen * 11400714785074694797) % (1 << 64)
    for length_s, want_hex in rows:
        length = int(length_s)
        assert xxhash.xxh3_128_hexdigest(bytes(buf[:length])) == want_hex, length


# ---------------------------------------------------------- file metadata --

def test_file_metadata_from_stat(tmp_path):
    """[TRIVIAL] FileMetadata mirrors os.stat and round-trips via dict."""
    p = tmp_path / "exe"
    p.write_bytes(b"#!/bin/sh\n")
    p.chmod(0o755)
    st = os.stat(p)
    meta = FileMetadata.from_stat(st)
    assert meta.size == 10
    assert meta.permissions == stat_mod.S_IMODE(st.st_mode) == 0o755
    assert meta.mtime == int(st.st_mtime)
    assert (meta.inode, meta.owner_uid, meta.owner_gid) == \
        (st.st_ino, st.st_uid, st.st_gid)
    assert FileMetadata.from_dict(meta.to_dict()) == meta
    assert sorted(meta.to_dict()) == [
        "atime", "ctime", "inode", "mtime",
        "owner_gid", "owner_uid", "permissions", "size",
    ]


# --------------------------------------------------------- canonical form --

def test_canonicalize_list():
    """[TRIVIAL] Empty list -> b''; otherwise newline-joined with trailing
    newline, UTF-8."""
    assert canonicalize_list([]) == b""
    assert canonicalize_list(["a"]) == b"a\n"
    assert canonicalize_list(["a", "b"]) == b"a\nb\n"
    assert canonicalize_list(["é"]) == "é\n".encode()


def test_profile_executable(fixtures_dir):
    """[TRIVIAL] profile_executable bundles the per-feature extractors."""
    path = str(fixtures_dir / "hello_gcc_O2.bin")
    profile = profile_executable(path)
    data = (fixtures_dir / "hello_gcc_O2.bin").read_bytes()
    assert profile.compilers == extract_compiler_strings(data)
    assert profile.symbols == extract_global_symbols(data)
    assert profile.strings == extract_printable_strings(data)
    assert profile.metadata.size == len(data)
    assert profile.path == path
    from siren.fuzzyhash import ctph_digest
    assert str(profile.file_digest) == str(ctph_digest(data))
    assert str(profile.strings_digest) == \
        str(ctph_digest(canonicalize_list(profile.strings)))
    assert str(profile.symbols_digest) == \
        str(ctph_digest(canonicalize_list(profile.symbols)))
