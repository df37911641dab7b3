"""Post-processing: chunk reassembly and per-process record consolidation.

Turns the receiver's append-only chunk rows back into messages, merges all
messages of one process into a single :class:`ProcessRecord`, folds
SCRIPT-layer rows into their interpreter's record, and derives imported
Python packages from the memory map.

Datagram loss can only remove information, never corrupt it: chunks decode
independently, gaps in a chunked list elide the torn entries at the gap
boundaries, and ``completeness`` flags name every field the category's
policy expected but the record is missing.  Sender-side ``_H`` digests are
authoritative — they are never recomputed from partially received lists.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .binprofile import FileMetadata, PathCategory, classify_path
from .collector import (
    LAYER_SCRIPT,
    LAYER_SELF,
    MessageType,
    PolicyField,
    Scope,
    _CATEGORY_TO_SCOPE,
    CollectionPolicy,
)
from .fuzzyhash import DigestParseError, FuzzyDigest, parse_digest
from .receiver import Store, StoreRow, _row_from_json, _row_from_tsv

__all__ = [
    "ProcessRecord",
    "ReassembledMessage",
    "build_records",
    "derive_python_packages",
    "load_records",
    "load_store_rows",
    "parse_list_message",
    "reassemble",
    "reassemble_with_stats",
    "record_from_obj",
    "record_to_obj",
    "write_records",
]

RECORD_SCHEMA_VERSION = 1

_LIST_TYPES = {
    MessageType.MODULES,
    MessageType.OBJECTS,
    MessageType.COMPILERS,
    MessageType.MAPS,
}

# Message types each scope's default policy emits on the SELF layer, used to
# name expected-but-missing fields.
_POLICY_FIELD_TYPES = {
    PolicyField.FILE_METADATA: (MessageType.META, MessageType.EXEMETA),
    PolicyField.MODULES: (MessageType.MODULES, MessageType.MODULES_H),
    PolicyField.LIBRARIES: (MessageType.OBJECTS, MessageType.OBJECTS_H),
    PolicyField.COMPILERS: (MessageType.COMPILERS, MessageType.COMPILERS_H),
    PolicyField.MEMORY_MAP: (MessageType.MAPS, MessageType.MAPS_H),
    PolicyField.FILE_H: (MessageType.FILE_H,),
    PolicyField.STRINGS_H: (MessageType.STRINGS_H,),
    PolicyField.SYMBOLS_H: (MessageType.SYMBOLS_H,),
}


def _expected_types_for_scope(scope: str) -> set[str]:
    policy = CollectionPolicy.default()
    expected: set[str] = set()
    for field_name, types in _POLICY_FIELD_TYPES.items():
        if field_name == PolicyField.FILE_METADATA and scope == Scope.PYTHON_SCRIPT:
            expected.add(MessageType.EXEMETA)
            continue
        if policy.enabled(field_name, scope):
            expected.update(types)
    return expected


@dataclass(frozen=True)
class ReassembledMessage:
    """One message rebuilt from its stored chunks.

    ``content`` concatenates the received payloads in seq order; when
    ``complete`` is false, missing chunks are simply absent from it.
    ``received_seqs`` records which chunks contributed, so consumers can
    elide entries torn at gap boundaries.
    """

    jobid: str
    stepid: str
    host: str
    pid: int
    hash: str
    time: int
    layer: str
    type: str
    content: bytes
    complete: bool
    total: int
    received_seqs: tuple[int, ...]
    chunk_sizes: tuple[int, ...]  # payload size per received seq, same order

    @property
    def key(self) -> tuple:
        return (self.jobid, self.stepid, self.host, self.pid, self.hash,
                self.time, self.layer, self.type)

    @property
    def process_key(self) -> tuple:
        return (self.jobid, self.stepid, self.host, self.pid, self.hash,
                self.time)


def reassemble_with_stats(
    rows: Iterable[StoreRow],
) -> tuple[list[ReassembledMessage], int]:
    """Group chunk rows into messages; returns (messages, malformed count).

    Rows are processed in the given (received) order: a duplicate
    ``(message, seq)`` keeps the first-received payload.  A message whose
    rows disagree on ``total`` is malformed — excluded and counted.
    """
    order: list[tuple] = []
    by_key: dict[tuple, dict] = {}
    for row in rows:
        if row.total < 1 or row.seq < 0 or row.seq >= row.total:
            key = (row.jobid, row.stepid, row.host, row.pid, row.hash,
                   row.time, row.layer, row.type)
            entry = by_key.get(key)
            if entry is None:
                order.append(key)
                by_key[key] = entry = {"total": None, "chunks": {},
                                       "malformed": True}
            else:
                entry["malformed"] = True
            continue
        key = (row.jobid, row.stepid, row.host, row.pid, row.hash,
               row.time, row.layer, row.type)
        entry = by_key.get(key)
        if entry is None:
            order.append(key)
            by_key[key] = entry = {"total": row.total, "chunks": {},
                                   "malformed": False}
        if entry["total"] is None:
            entry["total"] = row.total
        elif entry["total"] != row.total:
            entry["malformed"] = True
            continue
        if row.seq not in entry["chunks"]:
            entry["chunks"][row.seq] = row.content

    messages: list[ReassembledMessage] = []
    malformed = 0
    for key in order:
        entry = by_key[key]
        if entry["malformed"]:
            malformed += 1
            continue
        seqs = tuple(sorted(entry["chunks"]))
        total = entry["total"]
        messages.append(ReassembledMessage(
            *key,
            content=b"".join(entry["chunks"][s] for s in seqs),
            complete=len(seqs) == total,
            total=total,
            received_seqs=seqs,
            chunk_sizes=tuple(len(entry["chunks"][s]) for s in seqs),
        ))
    return messages, malformed


def reassemble(rows: Iterable[StoreRow]) -> list[ReassembledMessage]:
    return reassemble_with_stats(rows)[0]


def parse_list_message(msg: ReassembledMessage) -> list[str]:
    """Entries of a canonical newline-joined list, eliding torn entries.

    For a complete message this is simply the non-empty lines.  For an
    incomplete one, only entries lying strictly inside a contiguous run of
    received chunks and bounded by newlines on both sides are trusted:
    within each run, the leading line is dropped unless the run starts at
    chunk 0 (it may be the tail of an entry whose start was lost), and the
    trailing line is dropped unless the run reaches the final chunk (it may
    be the head of an entry whose end was lost).  Every surviving entry is
    therefore byte-correct — loss removes entries, never corrupts them.
    """
    if msg.complete:
        text = msg.content.decode("utf-8", errors="replace")
        return [line for line in text.split("\n") if line]
    # Split content back into per-run texts using the recorded chunk sizes.
    runs: list[tuple[bool, bool, bytes]] = []  # (starts_at_0, ends_at_last, text)
    offset = 0
    current: list[bytes] = []
    run_start_seq = None
    prev_seq = None
    for seq, size in zip(msg.received_seqs, msg.chunk_sizes):
        piece = msg.content[offset:offset + size]
        offset += size
        if prev_seq is not None and seq == prev_seq + 1:
            current.append(piece)
        else:
            if current:
                runs.append((run_start_seq == 0,
                             prev_seq == msg.total - 1, b"".join(current)))
            current = [piece]
            run_start_seq = seq
        prev_seq = seq
    if current:
        runs.append((run_start_seq == 0, prev_seq == msg.total - 1,
                     b"".join(current)))
    entries: list[str] = []
    for starts_at_0, ends_at_last, raw in runs:
        parts = raw.decode("utf-8", errors="replace").split("\n")
        if not starts_at_0:
            parts = parts[1:]
        if not ends_at_last and parts:
            parts = parts[:-1]
        entries.extend(p for p in parts if p)
    return entries


def derive_python_packages(maps: Iterable[str]) -> list[str]:
    """Imported-package names evidenced by the memory map.

    A path with a ``/site-packages/`` or ``/dist-packages/`` segment names
    the package by the first component after that segment (platform suffixes
    stripped if that component is itself a file).  A path under
    ``/lib/pythonX.Y/lib-dynload/`` names a standard-library extension
    module by its basename stripped of platform suffixes.
    """
    packages: set[str] = set()
    for path in maps:
        name = _package_from_path(path)
        if name:
            packages.add(name)
    return sorted(packages)


_DYNLOAD_RE = re.compile(r"/lib/python[0-9.]+/lib-dynload/([^/]+)$")


def _strip_platform_suffixes(filename: str) -> str:
    return filename.split(".", 1)[0]


def _package_from_path(path: str) -> str | None:
    for marker in ("/site-packages/", "/dist-packages/"):
        idx = path.find(marker)
        if idx >= 0:
            rest = path[idx + len(marker):]
            component = rest.split("/", 1)[0]
            if not component:
                return None
            if "." in component:
                component = _strip_platform_suffixes(component)
            return component or None
    m = _DYNLOAD_RE.search(path)
    if m:
        return _strip_platform_suffixes(m.group(1)) or None
    return None


@dataclass
class ProcessRecord:
    """Everything known about one process execution."""

    jobid: str
    stepid: str
    host: str
    pid: int
    path_hash: str
    time: int
    category: str | None = None
    exe_path: str | None = None
    uid: int | None = None
    gid: int | None = None
    ppid: int | None = None
    argv: list[str] | None = None
    file_metadata: FileMetadata | None = None
    modules: list[str] | None = None
    objects: list[str] | None = None
    compilers: list[str] | None = None
    maps: list[str] | None = None
    mo_h: FuzzyDigest | None = None
    co_h: FuzzyDigest | None = None
    ob_h: FuzzyDigest | None = None
    maps_h: FuzzyDigest | None = None
    fi_h: FuzzyDigest | None = None
    st_h: FuzzyDigest | None = None
    sy_h: FuzzyDigest | None = None
    script_metadata: FileMetadata | None = None
    script_path: str | None = None
    script_h: FuzzyDigest | None = None
    python_packages: list[str] = field(default_factory=list)
    completeness: set[str] = field(default_factory=set)
    orphan_script: bool = False

    @property
    def key(self) -> tuple:
        return (self.jobid, self.stepid, self.host, self.pid,
                self.path_hash, self.time)

    def key_string(self) -> str:
        return "/".join(str(part) for part in self.key)


_TYPE_TO_LIST_FIELD = {
    MessageType.MODULES: "modules",
    MessageType.OBJECTS: "objects",
    MessageType.COMPILERS: "compilers",
    MessageType.MAPS: "maps",
}

_TYPE_TO_DIGEST_FIELD = {
    MessageType.MODULES_H: "mo_h",
    MessageType.COMPILERS_H: "co_h",
    MessageType.OBJECTS_H: "ob_h",
    MessageType.MAPS_H: "maps_h",
    MessageType.FILE_H: "fi_h",
    MessageType.STRINGS_H: "st_h",
    MessageType.SYMBOLS_H: "sy_h",
}


def build_records(messages: Iterable[ReassembledMessage]) -> list[ProcessRecord]:
    """Merge reassembled messages into one record per process key."""
    order: list[tuple] = []
    groups: dict[tuple, list[ReassembledMessage]] = {}
    for msg in messages:
        pkey = msg.process_key
        if pkey not in groups:
            order.append(pkey)
            groups[pkey] = []
        groups[pkey].append(msg)
    return [_build_one(groups[pkey]) for pkey in order]


def _decode_json(msg: ReassembledMessage) -> dict | None:
    if not msg.complete:
        return None
    try:
        obj = json.loads(msg.content.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    return obj if isinstance(obj, dict) else None


def _decode_digest(msg: ReassembledMessage) -> FuzzyDigest | None:
    if not msg.complete:
        return None
    try:
        return parse_digest(msg.content.decode("utf-8"))
    except (UnicodeDecodeError, DigestParseError):
        return None


def _build_one(msgs: list[ReassembledMessage]) -> ProcessRecord:
    first = msgs[0]
    record = ProcessRecord(
        jobid=first.jobid, stepid=first.stepid, host=first.host,
        pid=first.pid, path_hash=first.hash, time=first.time,
    )
    self_msgs = [m for m in msgs if m.layer == LAYER_SELF]
    script_msgs = [m for m in msgs if m.layer == LAYER_SCRIPT]
    complete_types: set[str] = set()

    for msg in self_msgs:
        if msg.complete:
            complete_types.add(msg.type)
        if msg.type == MessageType.META:
            obj = _decode_json(msg)
            if obj is not None:
                record.exe_path = obj.get("exe") or record.exe_path
                record.uid = obj.get("uid")
                record.gid = obj.get("gid")
                record.ppid = obj.get("ppid")
                argv = obj.get("argv")
                if isinstance(argv, list):
                    record.argv = [str(a) for a in argv]
        elif msg.type == MessageType.EXEMETA:
            obj = _decode_json(msg)
            if obj is not None:
                path = obj.pop("path", None)
                if record.exe_path is None and isinstance(path, str):
                    record.exe_path = path
                try:
                    record.file_metadata = FileMetadata.from_dict(obj)
                except (TypeError, KeyError, ValueError):
                    pass
        elif msg.type in _TYPE_TO_LIST_FIELD:
            setattr(record, _TYPE_TO_LIST_FIELD[msg.type],
                    parse_list_message(msg))
        elif msg.type in _TYPE_TO_DIGEST_FIELD:
            digest = _decode_digest(msg)
            if digest is not None:
                setattr(record, _TYPE_TO_DIGEST_FIELD[msg.type], digest)
            elif msg.type in complete_types:
                complete_types.discard(msg.type)

    for msg in script_msgs:
        if msg.complete:
            complete_types.add(f"SCRIPT:{msg.type}")
        if msg.type == MessageType.EXEMETA:
            obj = _decode_json(msg)
            if obj is not None:
                path = obj.pop("path", None)
                if isinstance(path, str):
                    record.script_path = path
                try:
                    record.script_metadata = FileMetadata.from_dict(obj)
                except (TypeError, KeyError, ValueError):
                    pass
        elif msg.type == MessageType.FILE_H:
            digest = _decode_digest(msg)
            if digest is not None:
                record.script_h = digest
            else:
                complete_types.discard(f"SCRIPT:{msg.type}")

    if not self_msgs and script_msgs:
        record.orphan_script = True

    if record.exe_path:
        try:
            record.category = classify_path(record.exe_path).value
        except ValueError:
            record.category = None

    if record.maps:
        record.python_packages = derive_python_packages(record.maps)

    record.completeness = _completeness_flags(
        record, complete_types, bool(script_msgs))
    return record


def _completeness_flags(record: ProcessRecord, complete_types: set[str],
                        saw_script: bool) -> set[str]:
    if record.orphan_script:
        expected = {f"SCRIPT:{t}"
                    for t in _expected_types_for_scope(Scope.PYTHON_SCRIPT)}
        return expected - complete_types
    if record.category is not None:
        scope = _CATEGORY_TO_SCOPE[PathCategory(record.category)]
        expected = set(_expected_types_for_scope(scope))
    else:
        # Unclassifiable record: identity messages were evidently lost.
        expected = {MessageType.META, MessageType.EXEMETA}
    if saw_script:
        expected |= {f"SCRIPT:{t}"
                     for t in _expected_types_for_scope(Scope.PYTHON_SCRIPT)}
    return expected - complete_types


# --------------------------------------------------------------------------
# Record serialization (JSONL, schema-versioned) and store input sniffing.

def record_to_obj(record: ProcessRecord) -> dict:
    def digest(d: FuzzyDigest | None) -> str | None:
        return None if d is None else str(d)

    return {
        "schema": RECORD_SCHEMA_VERSION,
        "jobid": record.jobid,
        "stepid": record.stepid,
        "host": record.host,
        "pid": record.pid,
        "path_hash": record.path_hash,
        "time": record.time,
        "category": record.category,
        "exe_path": record.exe_path,
        "uid": record.uid,
        "gid": record.gid,
        "ppid": record.ppid,
        "argv": record.argv,
        "file_metadata": (record.file_metadata.to_dict()
                          if record.file_metadata else None),
        "modules": record.modules,
        "objects": record.objects,
        "compilers": record.compilers,
        "maps": record.maps,
        "mo_h": digest(record.mo_h),
        "co_h": digest(record.co_h),
        "ob_h": digest(record.ob_h),
        "maps_h": digest(record.maps_h),
        "fi_h": digest(record.fi_h),
        "st_h": digest(record.st_h),
        "sy_h": digest(record.sy_h),
        "script_metadata": (record.script_metadata.to_dict()
                            if record.script_metadata else None),
        "script_path": record.script_path,
        "script_h": digest(record.script_h),
        "python_packages": list(record.python_packages),
        "completeness": sorted(record.completeness),
        "orphan_script": record.orphan_script,
    }


def record_from_obj(obj: dict) -> ProcessRecord:
    if obj.get("schema") != RECORD_SCHEMA_VERSION:
        raise ValueError(f"unsupported record schema: {obj.get('schema')!r}")

    def digest(text: str | None) -> FuzzyDigest | None:
        return None if text is None else parse_digest(text)

    def metadata(sub: dict | None) -> FileMetadata | None:
        return None if sub is None else FileMetadata.from_dict(sub)

    return ProcessRecord(
        jobid=obj["jobid"], stepid=obj["stepid"], host=obj["host"],
        pid=obj["pid"], path_hash=obj["path_hash"], time=obj["time"],
        category=obj.get("category"), exe_path=obj.get("exe_path"),
        uid=obj.get("uid"), gid=obj.get("gid"), ppid=obj.get("ppid"),
        argv=obj.get("argv"),
        file_metadata=metadata(obj.get("file_metadata")),
        modules=obj.get("modules"), objects=obj.get("objects"),
        compilers=obj.get("compilers"), maps=obj.get("maps"),
        mo_h=digest(obj.get("mo_h")), co_h=digest(obj.get("co_h")),
        ob_h=digest(obj.get("ob_h")), maps_h=digest(obj.get("maps_h")),
        fi_h=digest(obj.get("fi_h")), st_h=digest(obj.get("st_h")),
        sy_h=digest(obj.get("sy_h")),
        script_metadata=metadata(obj.get("script_metadata")),
        script_path=obj.get("script_path"),
        script_h=digest(obj.get("script_h")),
        python_packages=list(obj.get("python_packages") or []),
        completeness=set(obj.get("completeness") or []),
        orphan_script=bool(obj.get("orphan_script", False)),
    )


def write_records(records: Iterable[ProcessRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_obj(record), sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def load_records(path: str | Path) -> list[ProcessRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_obj(json.loads(line)))
    return records


_SQLITE_MAGIC = b"SQLite format 3\x00"


def load_store_rows(path: str | Path) -> list[StoreRow]:
    """Chunk rows from a store file or a TSV/JSONL export of one."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head.startswith(_SQLITE_MAGIC):
        with Store(str(path)) as store:
            return list(store.iter_rows())
    with open(path, "rb") as fh:
        data = fh.read()
    stripped = data.lstrip()
    parse = _row_from_json if stripped.startswith(b"{") else _row_from_tsv
    return [parse(line) for line in data.splitlines() if line.strip()]


def consolidate_file(store_path: str | Path, out_path: str | Path,
                     ) -> tuple[int, int]:
    """Store/export file -> records JSONL; returns (records, malformed)."""
    rows = load_store_rows(store_path)
    messages, malformed = reassemble_with_stats(rows)
    records = build_records(messages)
    write_records(records, out_path)
    return len(records), malformed
