"""Intake service: receive datagrams, decode, append rows to the store.

One decodable datagram becomes exactly one :class:`StoreRow`; nothing is
merged or interpreted here — reassembly and consolidation happen offline.
A bounded queue connects the intake loop to the single store writer, and
the service never exits on data errors: undecodable datagrams, queue
overflow (drop-newest) and failed writes are counted and dropped.

The store is a single-file embedded database (sqlite3) with an append-only
row table; the analysis pipeline runs against either the store file or its
TSV/JSONL export, so the backend is swappable.
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import json
import queue
import signal
import socket
import sqlite3
import sys
import threading
import time
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

from .wireproto import DatagramChunk, WireDecodeError, decode

__all__ = [
    "DEFAULT_QUEUE_SIZE",
    "Receiver",
    "Store",
    "StoreRow",
    "export_rows",
    "import_rows",
    "main",
]

DEFAULT_QUEUE_SIZE = 65536
_BATCH_ROWS = 256
_BATCH_WINDOW = 0.100  # seconds
_COLUMNS = ("jobid", "stepid", "pid", "hash", "host", "time",
            "layer", "type", "seq", "total", "content", "received_at")


@dataclass(frozen=True)
class StoreRow:
    """One received chunk, exactly as it came off the wire."""

    jobid: str
    stepid: str
    pid: int
    hash: str
    host: str
    time: int
    layer: str
    type: str
    seq: int
    total: int
    content: bytes
    received_at: int  # UNIX milliseconds

    @classmethod
    def from_chunk(cls, chunk: DatagramChunk, received_at: int) -> "StoreRow":
        return cls(
            jobid=chunk.jobid, stepid=chunk.stepid, pid=chunk.pid,
            hash=chunk.hash, host=chunk.host, time=chunk.time,
            layer=chunk.layer, type=chunk.type, seq=chunk.seq,
            total=chunk.total, content=bytes(chunk.payload),
            received_at=received_at,
        )


class Store:
    """Append-only chunk store on sqlite3.

    Rows are never mutated after insert; insertion order is the rowid
    order.  One writer at a time; readers may run concurrently (WAL).
    """

    def __init__(self, path: str) -> None:
        self.path = path
        self._conn = sqlite3.connect(path)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS chunks ("
            " jobid TEXT NOT NULL, stepid TEXT NOT NULL, pid INTEGER NOT NULL,"
            " hash TEXT NOT NULL, host TEXT NOT NULL, time INTEGER NOT NULL,"
            " layer TEXT NOT NULL, type TEXT NOT NULL,"
            " seq INTEGER NOT NULL, total INTEGER NOT NULL,"
            " content BLOB NOT NULL, received_at INTEGER NOT NULL)"
        )
        self._conn.commit()

    def append_many(self, rows: Iterable[StoreRow]) -> None:
        self._conn.executemany(
            "INSERT INTO chunks VALUES (?,?,?,?,?,?,?,?,?,?,?,?)",
            [tuple(getattr(r, c) for c in _COLUMNS) for r in rows],
        )
        self._conn.commit()

    def append(self, row: StoreRow) -> None:
        self.append_many([row])

    def iter_rows(self) -> Iterator[StoreRow]:
        cur = self._conn.execute(
            f"SELECT {', '.join(_COLUMNS)} FROM chunks ORDER BY rowid"
        )
        for rec in cur:
            yield StoreRow(*rec[:10], bytes(rec[10]), rec[11])

    def count(self) -> int:
        (n,) = self._conn.execute("SELECT COUNT(*) FROM chunks").fetchone()
        return n

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# --------------------------------------------------------------------------
# Export / import.  The TSV form byte-escapes tab, newline and backslash in
# every text/content column; the JSONL form carries content as UTF-8 with
# invalid bytes replaced, plus a parallel base64 field when replacement
# occurred.  Both round-trip: export -> import -> export is byte-identical.

def _escape(raw: bytes) -> bytes:
    return (raw.replace(b"\\", b"\\\\")
               .replace(b"\t", b"\\t")
               .replace(b"\n", b"\\n"))


def _unescape(raw: bytes) -> bytes:
    out = bytearray()
    i = 0
    while i < len(raw):
        b = raw[i]
        if b == 0x5C and i + 1 < len(raw):
            nxt = raw[i + 1]
            if nxt == 0x74:
                out.append(0x09)
            elif nxt == 0x6E:
                out.append(0x0A)
            elif nxt == 0x5C:
                out.append(0x5C)
            else:
                out.append(b)
                out.append(nxt)
            i += 2
        else:
            out.append(b)
            i += 1
    return bytes(out)


def _row_to_tsv(row: StoreRow) -> bytes:
    fields = []
    for col in _COLUMNS:
        value = getattr(row, col)
        raw = value if isinstance(value, bytes) else str(value).encode("utf-8")
        fields.append(_escape(raw))
    return b"\t".join(fields) + b"\n"


def _row_from_tsv(line: bytes) -> StoreRow:
    parts = line.rstrip(b"\n").split(b"\t")
    if len(parts) != len(_COLUMNS):
        raise ValueError(
            f"TSV row has {len(parts)} columns, expected {len(_COLUMNS)}")
    vals = [_unescape(p) for p in parts]
    return StoreRow(
        jobid=vals[0].decode("utf-8"), stepid=vals[1].decode("utf-8"),
        pid=int(vals[2]), hash=vals[3].decode("utf-8"),
        host=vals[4].decode("utf-8"), time=int(vals[5]),
        layer=vals[6].decode("utf-8"), type=vals[7].decode("utf-8"),
        seq=int(vals[8]), total=int(vals[9]), content=vals[10],
        received_at=int(vals[11]),
    )


def _row_to_json(row: StoreRow) -> bytes:
    text = row.content.decode("utf-8", errors="replace")
    obj = {c: getattr(row, c) for c in _COLUMNS if c != "content"}
    obj["content"] = text
    if text.encode("utf-8") != row.content:
        obj["content_b64"] = base64.b64encode(row.content).decode("ascii")
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def _row_from_json(line: bytes) -> StoreRow:
    obj = json.loads(line)
    if "content_b64" in obj:
        content = base64.b64decode(obj["content_b64"])
    else:
        content = obj["content"].encode("utf-8")
    return StoreRow(
        jobid=obj["jobid"], stepid=obj["stepid"], pid=int(obj["pid"]),
        hash=obj["hash"], host=obj["host"], time=int(obj["time"]),
        layer=obj["layer"], type=obj["type"], seq=int(obj["seq"]),
        total=int(obj["total"]), content=content,
        received_at=int(obj["received_at"]),
    )


def export_rows(store: Store, fmt: str, out: BinaryIO) -> int:
    """Write all rows in insertion order; returns the row count."""
    if fmt == "tsv":
        encode_row = _row_to_tsv
    elif fmt == "jsonl":
        encode_row = _row_to_json
    else:
        raise ValueError(f"unknown export format: {fmt!r} (use tsv or jsonl)")
    n = 0
    for row in store.iter_rows():
        out.write(encode_row(row))
        n += 1
    return n


def import_rows(store: Store, fmt: str, stream: BinaryIO) -> int:
    """Append rows from an export stream, preserving order; returns count."""
    if fmt == "tsv":
        decode_row = _row_from_tsv
    elif fmt == "jsonl":
        decode_row = _row_from_json
    else:
        raise ValueError(f"unknown import format: {fmt!r} (use tsv or jsonl)")
    rows = [decode_row(line) for line in stream if line.strip()]
    store.append_many(rows)
    return len(rows)


# --------------------------------------------------------------------------
# The service.

class Receiver:
    """UDP intake loop plus single store writer, joined by a bounded queue."""

    def __init__(self, host: str, port: int, store_path: str,
                 queue_size: int = DEFAULT_QUEUE_SIZE) -> None:
        self._addr = (host, port)
        self._store_path = store_path
        self._queue: "queue.Queue[StoreRow]" = queue.Queue(maxsize=queue_size)
        self._stop = threading.Event()
        self._sock: socket.socket | None = None
        self._intake_thread: threading.Thread | None = None
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self.rows_stored = 0
        self.decode_drops = 0
        self.queue_drops = 0
        self.write_drops = 0
        self._last_ms = 0

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        # A bursty sender can overflow the default kernel receive buffer long
        # before the intake loop falls behind; ask for a generous one.
        try:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 23)
        except OSError:
            pass
        self._sock.bind(self._addr)
        self._sock.settimeout(0.2)
        self._addr = self._sock.getsockname()
        self._intake_thread = threading.Thread(
            target=self._intake_loop, name="siren-intake", daemon=True)
        writer = threading.Thread(target=self._writer_loop, name="siren-writer",
                                  daemon=True)
        self._threads = [self._intake_thread, writer]
        for t in self._threads:
            t.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._addr

    def stop(self) -> None:
        """Request a clean drain-and-flush shutdown."""
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        for t in self._threads:
            t.join(timeout)

    def stats(self) -> dict:
        return {
            "rows": self.rows_stored,
            "decode_drops": self.decode_drops,
            "queue_drops": self.queue_drops,
            "write_drops": self.write_drops,
            "queue_depth": self._queue.qsize(),
        }

    # -- intake ------------------------------------------------------------
    def _intake_loop(self) -> None:
        assert self._sock is not None
        while not self._stop.is_set():
            try:
                datagram, _ = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                chunk = decode(datagram)
            except WireDecodeError:
                with self._lock:
                    self.decode_drops += 1
                continue
            now_ms = int(time.time() * 1000)
            row = StoreRow.from_chunk(chunk, now_ms)
            try:
                self._queue.put_nowait(row)
            except queue.Full:
                with self._lock:
                    self.queue_drops += 1
        self._sock.close()

    # -- writer ------------------------------------------------------------
    def _next_batch(self) -> list[StoreRow]:
        batch: list[StoreRow] = []
        deadline = time.monotonic() + _BATCH_WINDOW
        try:
            batch.append(self._queue.get(timeout=_BATCH_WINDOW))
        except queue.Empty:
            return batch
        while len(batch) < _BATCH_ROWS and time.monotonic() < deadline:
            try:
                batch.append(self._queue.get_nowait())
            except queue.Empty:
                break
        return batch

    def _stamp(self, rows: list[StoreRow]) -> list[StoreRow]:
        # received_at is monotone non-decreasing within the writer even if
        # the wall clock steps backwards.
        stamped = []
        for row in rows:
            ms = max(row.received_at, self._last_ms)
            self._last_ms = ms
            if ms != row.received_at:
                row = dataclasses.replace(row, received_at=ms)
            stamped.append(row)
        return stamped

    def _writer_loop(self) -> None:
        store = Store(self._store_path)
        try:
            while True:
                batch = self._next_batch()
                if not batch:
                    # Drain-and-flush: only conclude once intake has stopped
                    # feeding the queue and nothing is left in it.
                    if (self._stop.is_set()
                            and not self._intake_thread.is_alive()
                            and self._queue.empty()):
                        break
                    continue
                batch = self._stamp(batch)
                try:
                    store.append_many(batch)
                    with self._lock:
                        self.rows_stored += len(batch)
                except sqlite3.Error:
                    # Batch failed: retry each row once, then drop it.
                    for row in batch:
                        stored = False
                        for _ in range(2):
                            try:
                                store.append(row)
                                stored = True
                                break
                            except sqlite3.Error:
                                continue
                        with self._lock:
                            if stored:
                                self.rows_stored += 1
                            else:
                                self.write_drops += 1
        finally:
            store.close()


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"--listen expects HOST:PORT, got {value!r}")
    return (host or "0.0.0.0", int(port))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="siren-receiver",
        description="Receive telemetry datagrams and append them to a store.",
    )
    parser.add_argument("--listen", type=_parse_listen, required=True,
                        metavar="HOST:PORT")
    parser.add_argument("--store", required=True, metavar="PATH")
    parser.add_argument("--queue", type=int, default=DEFAULT_QUEUE_SIZE,
                        metavar="N", help="intake queue bound (default %(default)s)")
    parser.add_argument("--stats-interval", type=float, default=0.0,
                        metavar="SECONDS",
                        help="print metrics every SECONDS (0 disables)")
    args = parser.parse_args(argv)

    host, port = args.listen
    receiver = Receiver(host, port, args.store, queue_size=args.queue)
    receiver.start()

    def print_stats(*_ignored) -> None:
        stats = receiver.stats()
        drops = (stats["decode_drops"] + stats["queue_drops"]
                 + stats["write_drops"])
        print(f"rows={stats['rows']} drops={drops} "
              f"queue_depth={stats['queue_depth']}", file=sys.stderr, flush=True)

    def request_stop(*_ignored) -> None:
        receiver.stop()

    signal.signal(signal.SIGTERM, request_stop)
    signal.signal(signal.SIGINT, request_stop)
    if hasattr(signal, "SIGUSR1"):
        signal.signal(signal.SIGUSR1, print_stats)

    bound = receiver.address
    print(f"listening on {bound[0]}:{bound[1]}, store {args.store}",
          file=sys.stderr, flush=True)
    next_stats = (time.monotonic() + args.stats_interval
                  if args.stats_interval > 0 else None)
    try:
        while not receiver._stop.is_set():
            time.sleep(0.2)
            if next_stats is not None and time.monotonic() >= next_stats:
                print_stats()
                next_stats = time.monotonic() + args.stats_interval
    except KeyboardInterrupt:
        receiver.stop()
    receiver.join(timeout=30.0)
    print_stats()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
