"""The injectable collection agent.

On process start the agent classifies the running executable, applies the
selective-collection policy, assembles telemetry messages and fires them at
the receiver over UDP — and it must *never* harm the host process: every
failure degrades to collecting less, all exceptions are swallowed at the
agent boundary, and nothing is written to the host's standard streams.

``collect`` is a pure function of an abstract :class:`ProcessView`, so the
same logic runs (a) in-process when the boot shim loads, and (b) in the
standalone ``siren scan`` CLI over a binary plus a synthetic environment.
"""

from __future__ import annotations

import json
import os
import socket
import sys
import threading
import time as _time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from . import wireproto
from .binprofile import (
    FileMetadata,
    PathCategory,
    canonicalize_list,
    classify_path,
    extract_compiler_strings,
    extract_global_symbols,
    extract_printable_strings,
    parse_loaded_modules,
    parse_memory_maps,
    path_hash,
)
from .fuzzyhash import ctph_digest

__all__ = [
    "LAYER_SCRIPT",
    "LAYER_SELF",
    "MESSAGE_TYPES",
    "CollectionPolicy",
    "MessageHeader",
    "MessageType",
    "ProcessView",
    "Scope",
    "TelemetryMessage",
    "agent_finalize",
    "agent_initialize",
    "build_live_view",
    "collect",
    "detect_python_script",
    "should_collect",
]

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 9753
DEFAULT_SEND_BUDGET = 0.050  # seconds per datagram batch

LAYER_SELF = "SELF"
LAYER_SCRIPT = "SCRIPT"


class MessageType:
    """The closed set of message type tokens (wire header ``type`` field).

    List-valued types (MODULES, OBJECTS, COMPILERS, MAPS) each have a
    companion ``_H`` type carrying the sender-side digest of the full
    canonical list, so comparability survives partial datagram loss.
    """

    META = "META"
    EXEMETA = "EXEMETA"
    MODULES = "MODULES"
    MODULES_H = "MODULES_H"
    OBJECTS = "OBJECTS"
    OBJECTS_H = "OBJECTS_H"
    COMPILERS = "COMPILERS"
    COMPILERS_H = "COMPILERS_H"
    MAPS = "MAPS"
    MAPS_H = "MAPS_H"
    FILE_H = "FILE_H"
    STRINGS_H = "STRINGS_H"
    SYMBOLS_H = "SYMBOLS_H"


MESSAGE_TYPES = (
    MessageType.META,
    MessageType.EXEMETA,
    MessageType.MODULES,
    MessageType.MODULES_H,
    MessageType.OBJECTS,
    MessageType.OBJECTS_H,
    MessageType.COMPILERS,
    MessageType.COMPILERS_H,
    MessageType.MAPS,
    MessageType.MAPS_H,
    MessageType.FILE_H,
    MessageType.STRINGS_H,
    MessageType.SYMBOLS_H,
)


class Scope:
    """Policy columns: the four collection scopes."""

    SYSTEM_EXECUTABLE = "SystemExecutable"
    USER_EXECUTABLE = "UserExecutable"
    PYTHON_INTERPRETER = "PythonInterpreter"
    PYTHON_SCRIPT = "PythonScript"


SCOPES = (
    Scope.SYSTEM_EXECUTABLE,
    Scope.USER_EXECUTABLE,
    Scope.PYTHON_INTERPRETER,
    Scope.PYTHON_SCRIPT,
)


class PolicyField:
    """Policy rows: the eight collectable fields."""

    FILE_METADATA = "FileMetadata"
    LIBRARIES = "Libraries"
    MODULES = "Modules"
    COMPILERS = "Compilers"
    MEMORY_MAP = "MemoryMap"
    FILE_H = "File_H"
    STRINGS_H = "Strings_H"
    SYMBOLS_H = "Symbols_H"


POLICY_FIELDS = (
    PolicyField.FILE_METADATA,
    PolicyField.LIBRARIES,
    PolicyField.MODULES,
    PolicyField.COMPILERS,
    PolicyField.MEMORY_MAP,
    PolicyField.FILE_H,
    PolicyField.STRINGS_H,
    PolicyField.SYMBOLS_H,
)

_CATEGORY_TO_SCOPE = {
    PathCategory.SYSTEM: Scope.SYSTEM_EXECUTABLE,
    PathCategory.USER: Scope.USER_EXECUTABLE,
    PathCategory.PYTHON_INTERPRETER: Scope.PYTHON_INTERPRETER,
}


@dataclass(frozen=True)
class CollectionPolicy:
    """Boolean matrix over (field, scope): which fields each scope collects."""

    matrix: Mapping[tuple[str, str], bool]

    def __post_init__(self) -> None:
        expected = {(f, s) for f in POLICY_FIELDS for s in SCOPES}
        if set(self.matrix) != expected:
            missing = expected - set(self.matrix)
            extra = set(self.matrix) - expected
            raise ValueError(
                f"policy matrix must cover all {len(expected)} (field, scope) "
                f"cells; missing={sorted(missing)} extra={sorted(extra)}"
            )

    def enabled(self, field_name: str, scope: str) -> bool:
        return bool(self.matrix[(field_name, scope)])

    @classmethod
    def default(cls) -> "CollectionPolicy":
        """The selective-collection defaults.

        System executables: file metadata and libraries only.  User
        executables: everything.  Python interpreters: file metadata,
        libraries and the memory map.  Python scripts: file metadata and
        the file digest only.
        """
        enabled_by_scope = {
            Scope.SYSTEM_EXECUTABLE: {
                PolicyField.FILE_METADATA,
                PolicyField.LIBRARIES,
            },
            Scope.USER_EXECUTABLE: set(POLICY_FIELDS),
            Scope.PYTHON_INTERPRETER: {
                PolicyField.FILE_METADATA,
                PolicyField.LIBRARIES,
                PolicyField.MEMORY_MAP,
            },
            Scope.PYTHON_SCRIPT: {
                PolicyField.FILE_METADATA,
                PolicyField.FILE_H,
            },
        }
        matrix = {
            (f, s): f in enabled_by_scope[s]
            for f in POLICY_FIELDS
            for s in SCOPES
        }
        return cls(matrix)


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@dataclass(frozen=True)
class ProcessView:
    """Everything ``collect`` may look at, bundled and injectable.

    ``exe_bytes`` is an accessor so the (possibly large) executable is only
    read when some enabled field needs it.  ``stat_path``/``read_path`` are
    filesystem accessors used for the executable's metadata and for a
    detected Python script; they default to the real filesystem and exist so
    tests can run ``collect`` hermetically.
    """

    env: Mapping[str, str]
    exe_path: str
    pid: int
    ppid: int
    uid: int
    gid: int
    loaded_object_paths: tuple[str, ...]
    maps_text: str
    argv: tuple[str, ...]
    exe_bytes: Callable[[], bytes]
    now: int
    stat_path: Callable[[str], os.stat_result] = os.stat
    read_path: Callable[[str], bytes] = _read_file

    def __post_init__(self) -> None:
        if not self.exe_path.startswith("/"):
            raise ValueError(f"exe_path must be absolute: {self.exe_path!r}")
        if self.pid <= 0:
            raise ValueError(f"pid must be positive: {self.pid}")
        object.__setattr__(self, "loaded_object_paths",
                           tuple(self.loaded_object_paths))
        object.__setattr__(self, "argv", tuple(self.argv))


@dataclass(frozen=True)
class MessageHeader:
    """Shared identity fields of one telemetry message."""

    jobid: str
    stepid: str
    pid: int
    hash: str
    host: str
    time: int
    layer: str
    type: str


@dataclass(frozen=True)
class TelemetryMessage:
    header: MessageHeader
    content: str


def should_collect(view: ProcessView) -> bool:
    """True iff this process is the collection representative.

    Under MPI-style launches only rank 0 reports (SLURM_PROCID == "0");
    processes without a rank (interactive, non-Slurm) always report.
    """
    rank = view.env.get("SLURM_PROCID")
    return rank is None or rank == "0"


def detect_python_script(argv: Iterable[str]) -> str | None:
    """First argv element after the interpreter that names a Python script.

    A ``.py`` argument immediately preceded by ``-c`` or ``-m`` is an
    argument to inline code or a module, not the input script.
    """
    argv = list(argv)
    for i in range(1, len(argv)):
        if argv[i].endswith(".py") and argv[i - 1] not in ("-c", "-m"):
            return argv[i]
    return None


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _canonical_text(items: list[str]) -> str:
    return canonicalize_list(items).decode("utf-8")


def _list_digest(items: list[str]) -> str:
    return str(ctph_digest(canonicalize_list(items)))


def collect(view: ProcessView, policy: CollectionPolicy | None = None,
            ) -> list[TelemetryMessage]:
    """Assemble all telemetry messages for one process.

    Deterministic given the view and policy.  Any internal failure degrades
    to emitting the messages that could still be built; this function never
    raises to the caller.
    """
    try:
        return _collect(view, policy or CollectionPolicy.default())
    except Exception:
        _debug_trace("collect failed")
        return []


def _collect(view: ProcessView, policy: CollectionPolicy,
             ) -> list[TelemetryMessage]:
    category = classify_path(view.exe_path)
    scope = _CATEGORY_TO_SCOPE[category]
    base = dict(
        jobid=view.env.get("SLURM_JOB_ID", ""),
        stepid=view.env.get("SLURM_STEP_ID", ""),
        pid=view.pid,
        hash=path_hash(view.exe_path),
        host=view.env.get("HOSTNAME", ""),
        time=view.now,
    )

    def msg(layer: str, mtype: str, content: str) -> TelemetryMessage:
        return TelemetryMessage(
            MessageHeader(layer=layer, type=mtype, **base), content)

    out: list[TelemetryMessage] = []
    exe_cache: dict[str, bytes] = {}

    def exe_data() -> bytes:
        if "b" not in exe_cache:
            exe_cache["b"] = view.exe_bytes()
        return exe_cache["b"]

    def guarded(build: Callable[[], list[TelemetryMessage]], what: str) -> None:
        try:
            out.extend(build())
        except Exception:
            _debug_trace(f"collect: {what} failed")

    if policy.enabled(PolicyField.FILE_METADATA, scope):
        guarded(lambda: [msg(LAYER_SELF, MessageType.META, _json({
            "exe": view.exe_path,
            "uid": view.uid,
            "gid": view.gid,
            "ppid": view.ppid,
            "argv": list(view.argv),
        }))], "META")
        guarded(lambda: [msg(LAYER_SELF, MessageType.EXEMETA, _json(
            {"path": view.exe_path,
             **FileMetadata.from_stat(view.stat_path(view.exe_path)).to_dict()}
        ))], "EXEMETA")
    if policy.enabled(PolicyField.MODULES, scope):
        def build_modules() -> list[TelemetryMessage]:
            modules = parse_loaded_modules(view.env.get("LOADEDMODULES", ""))
            return [
                msg(LAYER_SELF, MessageType.MODULES, _canonical_text(modules)),
                msg(LAYER_SELF, MessageType.MODULES_H, _list_digest(modules)),
            ]
        guarded(build_modules, "MODULES")
    if policy.enabled(PolicyField.LIBRARIES, scope):
        def build_objects() -> list[TelemetryMessage]:
            objects = list(view.loaded_object_paths)
            return [
                msg(LAYER_SELF, MessageType.OBJECTS, _canonical_text(objects)),
                msg(LAYER_SELF, MessageType.OBJECTS_H, _list_digest(objects)),
            ]
        guarded(build_objects, "OBJECTS")
    if policy.enabled(PolicyField.COMPILERS, scope):
        def build_compilers() -> list[TelemetryMessage]:
            compilers = extract_compiler_strings(exe_data())
            return [
                msg(LAYER_SELF, MessageType.COMPILERS, _canonical_text(compilers)),
                msg(LAYER_SELF, MessageType.COMPILERS_H, _list_digest(compilers)),
            ]
        guarded(build_compilers, "COMPILERS")
    if policy.enabled(PolicyField.MEMORY_MAP, scope):
        def build_maps() -> list[TelemetryMessage]:
            mapped = parse_memory_maps(view.maps_text)
            return [
                msg(LAYER_SELF, MessageType.MAPS, _canonical_text(mapped)),
                msg(LAYER_SELF, MessageType.MAPS_H, _list_digest(mapped)),
            ]
        guarded(build_maps, "MAPS")
    if policy.enabled(PolicyField.FILE_H, scope):
        guarded(lambda: [msg(LAYER_SELF, MessageType.FILE_H,
                             str(ctph_digest(exe_data())))], "FILE_H")
    if policy.enabled(PolicyField.STRINGS_H, scope):
        guarded(lambda: [msg(
            LAYER_SELF, MessageType.STRINGS_H,
            _list_digest(extract_printable_strings(exe_data())))], "STRINGS_H")
    if policy.enabled(PolicyField.SYMBOLS_H, scope):
        guarded(lambda: [msg(
            LAYER_SELF, MessageType.SYMBOLS_H,
            _list_digest(extract_global_symbols(exe_data())))], "SYMBOLS_H")

    if scope == Scope.PYTHON_INTERPRETER:
        script = detect_python_script(view.argv)
        if script is not None:
            if policy.enabled(PolicyField.FILE_METADATA, Scope.PYTHON_SCRIPT):
                guarded(lambda: [msg(LAYER_SCRIPT, MessageType.EXEMETA, _json(
                    {"path": script,
                     **FileMetadata.from_stat(view.stat_path(script)).to_dict()}
                ))], "script EXEMETA")
            if policy.enabled(PolicyField.FILE_H, Scope.PYTHON_SCRIPT):
                guarded(lambda: [msg(LAYER_SCRIPT, MessageType.FILE_H,
                                     str(ctph_digest(view.read_path(script))))],
                        "script FILE_H")
    return out


# --------------------------------------------------------------------------
# Live agent plumbing: view construction, transport, initialize/finalize.

def build_live_view() -> ProcessView:
    """A ProcessView of the calling process, read from /proc and os."""
    try:
        exe_path = os.readlink("/proc/self/exe")
    except OSError:
        exe_path = os.path.realpath(sys.executable)
    try:
        with open("/proc/self/cmdline", "rb") as fh:
            raw = fh.read()
        argv = tuple(a.decode("utf-8", "replace")
                     for a in raw.split(b"\x00") if a)
    except OSError:
        argv = tuple(sys.argv)
    try:
        with open("/proc/self/maps", "r") as fh:
            maps_text = fh.read()
    except OSError:
        maps_text = ""
    env = dict(os.environ)
    env.setdefault("HOSTNAME", socket.gethostname())
    # The loaded-object list approximates the dynamic loader's view from the
    # memory map: mapped files with a shared-object suffix in the name.
    objects = tuple(
        p for p in parse_memory_maps(maps_text)
        if ".so" in os.path.basename(p)
    )
    return ProcessView(
        env=env,
        exe_path=exe_path,
        pid=os.getpid(),
        ppid=os.getppid(),
        uid=os.getuid(),
        gid=os.getgid(),
        loaded_object_paths=objects,
        maps_text=maps_text,
        argv=argv,
        exe_bytes=lambda: _read_file(exe_path),
        now=int(_time.time()),
    )


def _debug_trace(context: str) -> None:
    """Append a diagnostic to the side file named by SIREN_DEBUG, if set."""
    path = os.environ.get("SIREN_DEBUG")
    if not path:
        return
    try:
        with open(path, "a") as fh:
            fh.write(f"[{_time.strftime('%Y-%m-%dT%H:%M:%S')}] {context}\n")
            fh.write(traceback.format_exc())
            fh.write("\n")
    except Exception:
        pass


class _Transport:
    """Fire-and-forget UDP sender with a per-batch time budget."""

    def __init__(self, host: str, port: int,
                 budget: float = DEFAULT_SEND_BUDGET) -> None:
        self._addr = (host, port)
        self._budget = budget
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None

    def send_batch(self, datagrams: Iterable[bytes]) -> int:
        """Send what fits in the budget; never raises, returns count sent."""
        sent = 0
        deadline = _time.monotonic() + self._budget
        with self._lock:
            try:
                if self._sock is None:
                    self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                    self._sock.setblocking(False)
                for dg in datagrams:
                    if _time.monotonic() > deadline:
                        break
                    try:
                        self._sock.sendto(dg, self._addr)
                        sent += 1
                    except (BlockingIOError, InterruptedError):
                        continue
                    except OSError:
                        break
            except Exception:
                _debug_trace("transport send failed")
        return sent

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                except Exception:
                    pass
                self._sock = None


class _AgentState:
    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.initialized = False
        self.finalized = False
        self.transport: _Transport | None = None
        self.terminal_datagrams: list[bytes] = []


_STATE = _AgentState()


def _endpoint() -> tuple[str, int]:
    host = os.environ.get("SIREN_HOST", DEFAULT_HOST)
    try:
        port = int(os.environ.get("SIREN_PORT", str(DEFAULT_PORT)))
    except ValueError:
        port = DEFAULT_PORT
    return host, port


def agent_initialize(view: ProcessView | None = None) -> None:
    """Collect and emit start-time messages.  Safe to call from anywhere:
    never raises, never touches the host's standard streams."""
    try:
        with _STATE.lock:
            if _STATE.initialized:
                return
            _STATE.initialized = True
        v = view if view is not None else build_live_view()
        if not should_collect(v):
            return
        messages = collect(v)
        datagrams: list[bytes] = []
        for m in messages:
            try:
                datagrams.extend(wireproto.encode(m))
            except Exception:
                _debug_trace(f"encode failed for {m.header.type}")
        # The terminal marker re-sent at finalize is a byte-identical copy of
        # the start-of-process META datagrams: consolidation de-duplicates
        # identical chunks, so the marker adds end-of-life evidence without
        # changing any record.
        if messages and messages[0].header.type == MessageType.META:
            try:
                _STATE.terminal_datagrams = wireproto.encode(messages[0])
            except Exception:
                _STATE.terminal_datagrams = []
        host, port = _endpoint()
        _STATE.transport = _Transport(host, port)
        _STATE.transport.send_batch(datagrams)
    except Exception:
        _debug_trace("agent_initialize failed")


def agent_finalize() -> None:
    """Emit the terminal marker and release the transport.  Idempotent."""
    try:
        with _STATE.lock:
            if _STATE.finalized or not _STATE.initialized:
                return
            _STATE.finalized = True
        if _STATE.transport is not None:
            if _STATE.terminal_datagrams:
                _STATE.transport.send_batch(_STATE.terminal_datagrams)
            _STATE.transport.close()
    except Exception:
        _debug_trace("agent_finalize failed")


def _reset_agent_state_for_tests() -> None:
    _STATE.initialized = False
    _STATE.finalized = False
    if _STATE.transport is not None:
        _STATE.transport.close()
    _STATE.transport = None
    _STATE.terminal_datagrams = []
