"""The ``siren`` command line: scan, consolidate, analyze, export.

``scan`` runs the collection logic over an executable plus a synthetic
environment and prints the telemetry messages it would emit (optionally
sending them).  ``consolidate`` turns a chunk store (or its TSV/JSONL
export) into consolidated process records.  ``analyze`` runs the reports
over a records file.  ``export`` dumps a chunk store as TSV or JSONL.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from . import analyze as _an
from . import collector as _co
from . import consolidate as _cons
from . import wireproto
from .receiver import Store, export_rows

__all__ = ["main"]


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _print_table(headers: list[str], rows: list[list], fmt: str,
                 out=None) -> None:
    out = out or sys.stdout
    cells = [[("" if v is None else str(v)) for v in row] for row in rows]
    if fmt == "tsv":
        out.write("\t".join(headers) + "\n")
        for row in cells:
            out.write("\t".join(row) + "\n")
        return
    widths = [len(h) for h in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(parts):
        return "  ".join(p.ljust(w) for p, w in zip(parts, widths)).rstrip()
    out.write(line(headers) + "\n")
    out.write(line(["-" * w for w in widths]) + "\n")
    for row in cells:
        out.write(line(row) + "\n")


# ------------------------------------------------------------------ scan --

def _parse_env_pairs(pairs: list[str]) -> dict[str, str]:
    env = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"--env expects K=V, got {pair!r}")
        env[key] = value
    return env


def _cmd_scan(args: argparse.Namespace) -> int:
    exe = os.path.abspath(args.exe)
    if not os.path.isfile(exe):
        return _fail(f"no such executable: {args.exe}")
    try:
        env = _parse_env_pairs(args.env)
    except ValueError as exc:
        return _fail(str(exc))
    argv = args.argv if args.argv else [exe]
    view = _co.ProcessView(
        env=env,
        exe_path=exe,
        pid=os.getpid(),
        ppid=os.getppid(),
        uid=os.getuid(),
        gid=os.getgid(),
        loaded_object_paths=(),
        maps_text="",
        argv=argv,
        exe_bytes=lambda: Path(exe).read_bytes(),
        now=int(time.time()),
    )
    if not _co.should_collect(view):
        print("not the collection representative (SLURM_PROCID != 0); "
              "no messages", file=sys.stderr)
        return 0
    messages = _co.collect(view)
    for message in messages:
        header = message.header
        print(json.dumps({
            "jobid": header.jobid, "stepid": header.stepid,
            "pid": header.pid, "hash": header.hash, "host": header.host,
            "time": header.time, "layer": header.layer, "type": header.type,
            "content": message.content,
        }, sort_keys=True))
    if args.send:
        import socket
        host = os.environ.get("SIREN_HOST", _co.DEFAULT_HOST)
        port = int(os.environ.get("SIREN_PORT", str(_co.DEFAULT_PORT)))
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        n = 0
        for message in messages:
            for datagram in wireproto.encode(message):
                sock.sendto(datagram, (host, port))
                n += 1
        sock.close()
        print(f"sent {n} datagrams to {host}:{port}", file=sys.stderr)
    return 0


# ----------------------------------------------------------- consolidate --

def _cmd_consolidate(args: argparse.Namespace) -> int:
    try:
        n_records, n_malformed = _cons.consolidate_file(args.store, args.out)
    except FileNotFoundError:
        return _fail(f"no such store: {args.store}")
    print(f"wrote {n_records} records to {args.out}"
          + (f" ({n_malformed} malformed messages excluded)"
             if n_malformed else ""),
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------- export --

def _cmd_export(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.store):
        return _fail(f"no such store: {args.store}")
    out = open(args.out, "wb") if args.out else sys.stdout.buffer
    try:
        with Store(args.store) as store:
            n = export_rows(store, args.format, out)
    finally:
        if args.out:
            out.close()
    print(f"exported {n} rows", file=sys.stderr)
    return 0


# --------------------------------------------------------------- analyze --

def _load_rules(path: str | None):
    if path is None:
        return _an.DEFAULT_LABEL_RULES
    return _an.parse_rules(Path(path).read_text(encoding="utf-8"))


_USAGE_HEADERS = ["key", "unique_users", "job_count", "process_count",
                  "unique_variants"]


def _usage_rows(stats):
    return [[s.key, s.unique_users, s.job_count, s.process_count,
             s.unique_variants] for s in stats]


def _cmd_analyze(args: argparse.Namespace) -> int:
    try:
        records = _cons.load_records(args.records)
    except FileNotFoundError:
        return _fail(f"no such records file: {args.records}")
    sub = args.analysis

    if sub == "labels":
        labeled = _an.apply_labels(records, _load_rules(args.rules))
        _print_table(
            ["key", "category", "exe_path", "label"],
            [[r.key_string(), r.category or "", r.exe_path or "", label]
             for r, label in labeled],
            args.format)
        return 0

    if sub == "usage":
        labeled = _an.apply_labels(records, _load_rules(args.rules))
        if args.category:
            labeled = [(r, l) for r, l in labeled if r.category == args.category]
        stats = _an.usage_stats(labeled, args.group_by, args.variant)
        _print_table(_USAGE_HEADERS, _usage_rows(stats), args.format)
        return 0

    if sub == "deviations":
        rows = _an.library_deviation_report(records, args.exe)
        if not rows:
            print(f"no records with an object digest for {args.exe}",
                  file=sys.stderr)
            return 0
        table = []
        for row in rows:
            if row.available:
                diff = "; ".join(["+" + p for p in row.added]
                                 + ["-" + p for p in row.removed]) or "(none)"
            else:
                diff = "(unavailable)"
            table.append([row.objects_h, row.process_count, diff])
        _print_table(["objects_h", "processes", "difference_vs_most_common"],
                     table, args.format)
        return 0

    if sub == "filters":
        substrings = (tuple(s for s in args.substrings.split(",") if s)
                      if args.substrings else _an.DEFAULT_FILTER_SUBSTRINGS)
        try:
            stats = _an.filter_library_substrings(records, substrings)
        except ValueError as exc:
            return _fail(str(exc))
        _print_table(_USAGE_HEADERS, _usage_rows(stats), args.format)
        return 0

    if sub == "similar":
        target = _find_target(records, args.target)
        if target is None:
            return _fail(f"no record matches target {args.target!r}")
        labeled = _an.apply_labels(records, _load_rules(args.rules))
        results = _an.similarity_search(target, labeled, args.top)
        rows = []
        for res in results:
            rows.append([res.candidate_label, res.avg_text]
                        + [res.score_or_none(c) for c in _an.SIMILARITY_COLUMNS]
                        + [res.candidate_key])
        _print_table(
            ["label", "avg_sim", "mo_h", "co_h", "ob_h", "fi_h", "st_h",
             "sy_h", "key"],
            rows, args.format)
        return 0

    if sub == "compilers":
        stats = _an.compiler_report(records)
        _print_table(_USAGE_HEADERS, _usage_rows(stats), args.format)
        return 0

    if sub == "python":
        interp, pkgs = _an.python_report(records)
        print("# interpreters")
        _print_table(_USAGE_HEADERS, _usage_rows(interp), args.format)
        print("\n# packages")
        _print_table(_USAGE_HEADERS, _usage_rows(pkgs), args.format)
        return 0

    if sub == "matrix":
        labeled = _an.apply_labels(records, _load_rules(args.rules))
        try:
            labels, items, cells = _an.dependency_matrix(labeled, args.axis)
        except ValueError as exc:
            return _fail(str(exc))
        writer = csv.writer(sys.stdout)
        writer.writerow(["label"] + items)
        for label, row in zip(labels, cells):
            writer.writerow([label] + row)
        return 0

    return _fail(f"unknown analysis: {sub!r}")


def _find_target(records, spec: str):
    for record in records:
        if record.exe_path == spec or record.key_string() == spec:
            return record
    return None


# ------------------------------------------------------------------ main --

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siren",
        description="Software identification and recognition toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser(
        "scan", help="collect telemetry messages for an executable")
    scan.add_argument("exe")
    scan.add_argument("--env", action="append", default=[], metavar="K=V",
                      help="synthetic environment entry (repeatable)")
    scan.add_argument("--argv", nargs=argparse.REMAINDER, default=None,
                      help="synthetic argv (all remaining arguments)")
    scan.add_argument("--send", action="store_true",
                      help="also transmit the messages over UDP")
    scan.set_defaults(func=_cmd_scan)

    cons = sub.add_parser(
        "consolidate", help="build process records from a chunk store")
    cons.add_argument("--store", required=True,
                      help="store file or TSV/JSONL export of one")
    cons.add_argument("--out", required=True, help="output records JSONL")
    cons.set_defaults(func=_cmd_consolidate)

    export = sub.add_parser("export", help="dump a chunk store")
    export.add_argument("--store", required=True)
    export.add_argument("--format", choices=["tsv", "jsonl"], required=True)
    export.add_argument("--out", default=None,
                        help="output file (default stdout)")
    export.set_defaults(func=_cmd_export)

    an = sub.add_parser("analyze", help="reports over consolidated records")
    an.add_argument("records", help="records JSONL from `siren consolidate`")
    an_sub = an.add_subparsers(dest="analysis", required=True)

    def common(p, rules=False):
        p.add_argument("--format", choices=["text", "tsv"], default="text")
        if rules:
            p.add_argument("--rules", default=None,
                           help="label rules file: priority<TAB>regex<TAB>label")
        p.set_defaults(func=_cmd_analyze)

    common(an_sub.add_parser("labels", help="per-record derived labels"),
           rules=True)

    usage = an_sub.add_parser("usage", help="usage statistics")
    usage.add_argument("--group-by", dest="group_by", default="label",
                       choices=["exe_path", "label", "interpreter"])
    usage.add_argument("--variant", default="fi_h",
                       choices=["mo_h", "co_h", "ob_h", "maps_h", "fi_h",
                                "st_h", "sy_h", "script_h"],
                       help="digest column counted as distinct variants")
    usage.add_argument("--category", default=None,
                       choices=["System", "User", "PythonInterpreter"])
    common(usage, rules=True)

    dev = an_sub.add_parser("deviations",
                            help="distinct shared-object sets of one executable")
    dev.add_argument("--exe", required=True)
    common(dev)

    filt = an_sub.add_parser("filters",
                             help="usage per library-substring tag")
    filt.add_argument("--substrings", default=None,
                      help="comma-separated substrings (default: built-in list)")
    common(filt)

    sim = an_sub.add_parser("similar", help="similarity search")
    sim.add_argument("--target", required=True,
                     help="target record: exe path or jobid/stepid/host/pid/hash/time")
    sim.add_argument("--top", type=int, default=10, metavar="K")
    common(sim, rules=True)

    common(an_sub.add_parser("compilers", help="usage per compiler-string set"))
    common(an_sub.add_parser("python", help="interpreter and package reports"))

    matrix = an_sub.add_parser("matrix", help="binary dependency matrix (CSV)")
    matrix.add_argument("--axis", required=True,
                        choices=["compilers", "libraries"])
    common(matrix, rules=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
