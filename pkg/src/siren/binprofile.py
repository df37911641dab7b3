"""Feature extraction from executables and process state.

Everything the telemetry agent knows about a binary comes from here: file
metadata, the compiler identification strings recorded in the ELF
``.comment`` section, the defined global/weak symbol names (the binary's
public interface), printable strings, a 128-bit path hash used purely as a
discriminator, path classification into System / User / PythonInterpreter,
and parsers for ``/proc/<pid>/maps`` text and the ``LOADEDMODULES``
environment variable.

The ELF reader is deliberately small: it understands 32- and 64-bit files in
either byte order and reads only section headers, string tables, and symbol
tables -- no program headers, relocation, or loader semantics.
"""

from __future__ import annotations

import os
import re
import stat
import struct
from dataclasses import dataclass
from enum import Enum

import xxhash

from siren.fuzzyhash import FuzzyDigest, ctph_digest

__all__ = [
    "ElfFormatError",
    "ExecutableProfile",
    "FileMetadata",
    "PathCategory",
    "SYSTEM_PREFIXES",
    "canonicalize_list",
    "classify_path",
    "extract_compiler_strings",
    "extract_global_symbols",
    "extract_printable_strings",
    "parse_loaded_modules",
    "parse_memory_maps",
    "parse_memory_maps_with_warnings",
    "path_hash",
    "profile_executable",
]

#: Directory prefixes whose executables are treated as system software.
SYSTEM_PREFIXES = (
    "/etc/", "/dev/", "/usr/", "/bin/", "/boot/", "/lib/",
    "/opt/", "/sbin/", "/sys/", "/proc/", "/var/",
)

_PYTHON_BASENAME = re.compile(r"python[0-9.]*\Z")


class PathCategory(Enum):
    """Mutually exclusive classification of an executable path."""

    SYSTEM = "System"
    USER = "User"
    PYTHON_INTERPRETER = "PythonInterpreter"


class ElfFormatError(ValueError):
    """Raised when input bytes are not a parseable ELF file."""


@dataclass(frozen=True)
class FileMetadata:
    """The stat-derived identity of a file."""

    inode: int
    size: int
    permissions: int
    owner_uid: int
    owner_gid: int
    atime: int
    mtime: int
    ctime: int

    @classmethod
    def from_stat(cls, st: os.stat_result) -> "FileMetadata":
        return cls(
            inode=st.st_ino,
            size=st.st_size,
            permissions=stat.S_IMODE(st.st_mode),
            owner_uid=st.st_uid,
            owner_gid=st.st_gid,
            atime=int(st.st_atime),
            mtime=int(st.st_mtime),
            ctime=int(st.st_ctime),
        )

    def to_dict(self) -> dict:
        return {
            "inode": self.inode,
            "size": self.size,
            "permissions": self.permissions,
            "owner_uid": self.owner_uid,
            "owner_gid": self.owner_gid,
            "atime": self.atime,
            "mtime": self.mtime,
            "ctime": self.ctime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FileMetadata":
        return cls(**{k: int(d[k]) for k in (
            "inode", "size", "permissions", "owner_uid", "owner_gid",
            "atime", "mtime", "ctime",
        )})


@dataclass(frozen=True)
class ExecutableProfile:
    """Everything extracted from one executable file."""

    path: str
    metadata: FileMetadata
    compilers: list[str]
    symbols: list[str]
    strings: list[str]
    file_digest: FuzzyDigest
    strings_digest: FuzzyDigest
    symbols_digest: FuzzyDigest


def classify_path(path: str) -> PathCategory:
    """Classify an absolute executable path.

    System paths start with one of :data:`SYSTEM_PREFIXES`; a system path
    whose basename looks like a Python interpreter (``python``, ``python3``,
    ``python3.10``, ...) is PythonInterpreter; everything else -- including
    interpreters installed under user paths -- is User.
    """
    if not path or not path.startswith("/"):
        raise ValueError(f"classify_path requires an absolute path, got {path!r}")
    if path.startswith(SYSTEM_PREFIXES):
        if _PYTHON_BASENAME.fullmatch(os.path.basename(path)):
            return PathCategory.PYTHON_INTERPRETER
        return PathCategory.SYSTEM
    return PathCategory.USER


def path_hash(path: str) -> str:
    """XXH3-128 of the path's UTF-8 bytes as 32 lowercase hex characters.

    The value discriminates executables sharing a pid (exec replacement);
    it is never compared for similarity.
    """
    return xxhash.xxh3_128_hexdigest(path.encode("utf-8"))


# ---------------------------------------------------------------------------
# ELF reading
# ---------------------------------------------------------------------------

_SHT_SYMTAB = 2
_SHT_STRTAB = 3
_SHT_DYNSYM = 11
_SHN_UNDEF = 0
_SHN_XINDEX = 0xFFFF
_STB_GLOBAL = 1
_STB_WEAK = 2
_STB_GNU_UNIQUE = 10


class _ElfFile:
    """Minimal section-level ELF reader (32/64-bit, both byte orders)."""

    def __init__(self, data: bytes):
        if len(data) < 16 or data[:4] != b"\x7fELF":
            raise ElfFormatError("not an ELF file (bad magic)")
        ei_class, ei_data = data[4], data[5]
        if ei_class not in (1, 2):
            raise ElfFormatError(f"unsupported ELF class {ei_class}")
        if ei_data not in (1, 2):
            raise ElfFormatError(f"unsupported ELF byte order {ei_data}")
        self.data = data
        self.is64 = ei_class == 2
        endian = "<" if ei_data == 1 else ">"
        if self.is64:
            ehdr_fmt = endian + "16sHHIQQQIHHHHHH"
            self._shdr_fmt = endian + "IIQQQQIIQQ"
            self._sym_fmt = endian + "IBBHQQ"
        else:
            ehdr_fmt = endian + "16sHHIIIIIHHHHHH"
            self._shdr_fmt = endian + "IIIIIIIIII"
            self._sym_fmt = endian + "IIIBBH"
        ehdr_size = struct.calcsize(ehdr_fmt)
        if len(data) < ehdr_size:
            raise ElfFormatError("truncated ELF header")
        (_, _, _, _, _, _, e_shoff, _, _, _, _, e_shentsize, e_shnum, e_shstrndx) = (
            struct.unpack_from(ehdr_fmt, data)
        )
        self.sections = []
        if e_shoff == 0:
            self._shstrtab = b""
            return
        shentsize = struct.calcsize(self._shdr_fmt)
        if e_shentsize and e_shentsize != shentsize:
            raise ElfFormatError(f"unexpected section header size {e_shentsize}")
        try:
            first = self._read_shdr(e_shoff)
        except struct.error as exc:
            raise ElfFormatError("truncated section header table") from exc
        # Extension mechanism for >0xff00 sections: real counts live in
        # section header 0.
        if e_shnum == 0:
            e_shnum = first["size"]
        if e_shstrndx == _SHN_XINDEX:
            e_shstrndx = first["link"]
        for i in range(e_shnum):
            try:
                self.sections.append(self._read_shdr(e_shoff + i * shentsize))
            except struct.error as exc:
                raise ElfFormatError("truncated section header table") from exc
        if e_shstrndx >= len(self.sections):
            raise ElfFormatError("bad section name string table index")
        self._shstrtab = self._section_bytes(self.sections[e_shstrndx])
        for sec in self.sections:
            sec["name"] = self._strz(self._shstrtab, sec["name_off"])

    def _read_shdr(self, offset: int) -> dict:
        fields = struct.unpack_from(self._shdr_fmt, self.data, offset)
        keys = ("name_off", "type", "flags", "addr", "offset", "size",
                "link", "info", "addralign", "entsize")
        return dict(zip(keys, fields))

    def _section_bytes(self, sec: dict) -> bytes:
        start, size = sec["offset"], sec["size"]
        if start + size > len(self.data):
            raise ElfFormatError(f"section extends past end of file")
        return self.data[start : start + size]

    @staticmethod
    def _strz(table: bytes, offset: int) -> str:
        if offset >= len(table):
            return ""
        end = table.find(b"\x00", offset)
        if end < 0:
            end = len(table)
        return table[offset:end].decode("utf-8", "replace")

    def find_section(self, name: str) -> dict | None:
        for sec in self.sections:
            if sec.get("name") == name:
                return sec
        return None

    def section_content(self, name: str) -> bytes | None:
        sec = self.find_section(name)
        return None if sec is None else self._section_bytes(sec)

    def symbols(self, sh_type: int):
        """Yield (name, binding, shndx) from the first table of sh_type."""
        for sec in self.sections:
            if sec["type"] != sh_type:
                continue
            strtab = self._section_bytes(self.sections[sec["link"]]) if (
                sec["link"] < len(self.sections)
            ) else b""
            content = self._section_bytes(sec)
            entsize = struct.calcsize(self._sym_fmt)
            for off in range(0, len(content) - entsize + 1, entsize):
                fields = struct.unpack_from(self._sym_fmt, content, off)
                if self.is64:
                    st_name, st_info, _, st_shndx = fields[0], fields[1], fields[2], fields[3]
                else:
                    st_name, st_info, st_shndx = fields[0], fields[3], fields[5]
                yield self._strz(strtab, st_name), st_info >> 4, st_shndx
            return


def extract_compiler_strings(elf: bytes) -> list[str]:
    """Compiler identification strings from the ``.comment`` section.

    NUL-separated entries in file order, empty entries dropped, duplicates
    removed.  Absent section yields an empty list; non-ELF input raises
    :class:`ElfFormatError`.
    """
    content = _ElfFile(elf).section_content(".comment")
    if content is None:
        return []
    seen = []
    for entry in content.split(b"\x00"):
        text = entry.decode("utf-8", "replace")
        if text and text not in seen:
            seen.append(text)
    return seen


def extract_global_symbols(elf: bytes) -> list[str]:
    """Names of defined, externally visible symbols, sorted and de-duplicated.

    Reads the static symbol table, falling back to the dynamic symbol table
    when the binary is stripped.  A symbol qualifies when it is defined
    (section index not UNDEF) and its binding is global, weak, or
    GNU-unique -- the same set ``nm --defined-only --extern-only`` prints.
    """
    reader = _ElfFile(elf)
    has_symtab = any(sec["type"] == _SHT_SYMTAB for sec in reader.sections)
    table = _SHT_SYMTAB if has_symtab else _SHT_DYNSYM
    names = {
        name
        for name, binding, shndx in reader.symbols(table)
        if name
        and shndx != _SHN_UNDEF
        and binding in (_STB_GLOBAL, _STB_WEAK, _STB_GNU_UNIQUE)
    }
    return sorted(names)


def extract_printable_strings(data: bytes, min_len: int = 4) -> list[str]:
    """Maximal runs of at least ``min_len`` printable ASCII bytes (0x20-0x7E)."""
    if min_len < 1:
        raise ValueError(f"min_len must be >= 1, got {min_len}")
    out = []
    run_start = None
    for i, b in enumerate(data):
        if 0x20 <= b <= 0x7E:
            if run_start is None:
                run_start = i
        elif run_start is not None:
            if i - run_start >= min_len:
                out.append(data[run_start:i].decode("ascii"))
            run_start = None
    if run_start is not None and len(data) - run_start >= min_len:
        out.append(data[run_start:].decode("ascii"))
    return out


def canonicalize_list(items: list[str]) -> bytes:
    """Canonical byte form of a string list: newline-joined, trailing newline.

    This is the exact input fed to :func:`siren.fuzzyhash.ctph_digest` for
    all list-valued telemetry fields.  Order is preserved; symbol lists are
    sorted upstream by :func:`extract_global_symbols`.
    """
    if not items:
        return b""
    return ("\n".join(items) + "\n").encode("utf-8")


_MAPS_ADDR = re.compile(r"[0-9a-f]+-[0-9a-f]+\Z")
_MAPS_DEV = re.compile(r"[0-9a-f]+:[0-9a-f]+\Z")


def parse_memory_maps_with_warnings(text: str) -> tuple[list[str], int]:
    """Parse Linux ``maps`` text into mapped-file paths plus a warning tally.

    Returns an ordered, de-duplicated list of non-empty pathname fields.
    Anonymous mappings and pseudo entries such as ``[heap]`` or ``[stack]``
    are excluded.  Lines that do not match the maps format are skipped and
    counted.
    """
    paths: list[str] = []
    seen = set()
    warnings = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = line.split(None, 5)
        if len(fields) < 5:
            warnings += 1
            continue
        addr, perms, offset, dev, inode = fields[:5]
        if (
            not _MAPS_ADDR.fullmatch(addr)
            or len(perms) != 4
            or not _MAPS_DEV.fullmatch(dev)
            or not inode.isdigit()
        ):
            warnings += 1
            continue
        if len(fields) < 6:
            continue
        pathname = fields[5].strip()
        if not pathname or (pathname.startswith("[") and pathname.endswith("]")):
            continue
        if pathname not in seen:
            seen.add(pathname)
            paths.append(pathname)
    return paths, warnings


def parse_memory_maps(text: str) -> list[str]:
    """Mapped-file paths from Linux ``maps`` text (see the _with_warnings variant)."""
    return parse_memory_maps_with_warnings(text)[0]


def parse_loaded_modules(env_value: str) -> list[str]:
    """Split a LOADEDMODULES-style value on colons, dropping empty fields."""
    return [field for field in (env_value or "").split(":") if field]


def profile_executable(path: str, data: bytes | None = None) -> ExecutableProfile:
    """Extract the full identification profile of one executable file.

    ``data`` may be supplied to avoid re-reading the file.  Non-ELF content
    degrades to empty compiler and symbol lists (their digests cover the
    empty canonical form); strings and the content digest are computed for
    any byte sequence.
    """
    st = os.stat(path)
    if data is None:
        with open(path, "rb") as fh:
            data = fh.read()
    try:
        compilers = extract_compiler_strings(data)
        symbols = extract_global_symbols(data)
    except ElfFormatError:
        compilers = []
        symbols = []
    strings = extract_printable_strings(data)
    return ExecutableProfile(
        path=path,
        metadata=FileMetadata.from_stat(st),
        compilers=compilers,
        symbols=symbols,
        strings=strings,
        file_digest=ctph_digest(data),
        strings_digest=ctph_digest(canonicalize_list(strings)),
        symbols_digest=ctph_digest(canonicalize_list(symbols)),
    )
