"""Analyses over consolidated process records.

Provides regex labeling, usage statistics, library-deviation and compiler
reports, filtered library substrings, dependency matrices, Python
interpreter/package reports, and fuzzy-hash similarity search for
identifying unknown executables.

All operations are read-only over records and deterministic: sort orders
are total (ties resolved by explicit secondary keys), so output never
depends on input order.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .binprofile import PathCategory
from .consolidate import ProcessRecord
from .fuzzyhash import ctph_compare

__all__ = [
    "DEFAULT_FILTER_SUBSTRINGS",
    "DEFAULT_LABEL_RULES",
    "SIMILARITY_COLUMNS",
    "UNKNOWN_LABEL",
    "DeviationRow",
    "LabelRule",
    "SimilarityResult",
    "UsageStat",
    "apply_labels",
    "average_similarity",
    "compiler_report",
    "dependency_matrix",
    "filter_library_substrings",
    "label_for",
    "library_deviation_report",
    "parse_rules",
    "python_report",
    "similarity_search",
    "tags_for_path",
    "usage_stats",
]

UNKNOWN_LABEL = "UNKNOWN"

# The six similarity columns.  The memory-map digest exists on records but
# is not a similarity column: map contents are dominated by addresses and
# environment, not software identity.
SIMILARITY_COLUMNS = ("mo_h", "co_h", "ob_h", "fi_h", "st_h", "sy_h")

# Combinatorial substrings used by the library filter, in match order; tags
# for co-occurring substrings join the matched names with "-" in this order.
DEFAULT_FILTER_SUBSTRINGS = (
    "libsci", "pthread", "pmi", "netcdf", "hdf5", "fortran", "parallel",
    "python", "fabric", "numa", "boost", "openacc", "amdgpu", "cuda", "drm",
    "rocsolver", "rocsparse", "rocfft", "MIOpen", "rocm", "gromacs", "blas",
    "fft", "torch", "quadmath", "craymath", "cray", "tykky", "climatedt",
    "amber", "spack", "yaml", "java", "siren",
)


@dataclass(frozen=True)
class LabelRule:
    """One labeling rule: first match in ascending priority order wins."""

    priority: int
    pattern: str
    label: str

    def matches(self, path: str) -> bool:
        return re.search(self.pattern, path, re.IGNORECASE) is not None


# Illustrative default rules covering the known software names.  Note the
# ordering subtlety: "miniconda" contains the substring "icon", so the
# miniconda rule must outrank the icon rule.  "lmp" (the LAMMPS binary
# name) matches as a token, not a bare substring.
DEFAULT_LABEL_RULES = (
    LabelRule(10, r"lammps", "LAMMPS"),
    LabelRule(20, r"(?:^|[^a-z])lmp(?:[^a-z]|$)", "LAMMPS"),
    LabelRule(30, r"gromacs", "GROMACS"),
    LabelRule(40, r"miniconda", "miniconda"),
    LabelRule(50, r"janko", "janko"),
    LabelRule(60, r"icon", "icon"),
    LabelRule(70, r"amber", "amber"),
    LabelRule(80, r"gzip", "gzip"),
    LabelRule(90, r"alexandria", "alexandria"),
    LabelRule(100, r"radrad", "RadRad"),
)


def parse_rules(text: str) -> tuple[LabelRule, ...]:
    """Parse a rules file: one rule per line, ``priority<TAB>regex<TAB>label``.

    Blank lines and lines starting with ``#`` are ignored.
    """
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"rules line {lineno}: expected priority<TAB>regex<TAB>label, "
                f"got {line!r}")
        priority_text, pattern, label = parts
        try:
            priority = int(priority_text.strip())
        except ValueError:
            raise ValueError(
                f"rules line {lineno}: priority must be an integer, "
                f"got {priority_text!r}") from None
        try:
            re.compile(pattern)
        except re.error as exc:
            raise ValueError(f"rules line {lineno}: bad regex: {exc}") from None
        rules.append(LabelRule(priority, pattern, label.strip()))
    return tuple(rules)


def label_for(record: ProcessRecord,
              rules: Sequence[LabelRule] = DEFAULT_LABEL_RULES) -> str:
    """The derived label of one record.

    User executables are labeled by the first matching rule in ascending
    priority order, UNKNOWN when none matches.  System executables are
    labeled by basename, Python interpreters by interpreter name.
    """
    if record.category == PathCategory.USER.value:
        path = record.exe_path or ""
        for rule in sorted(rules, key=lambda r: r.priority):
            if rule.matches(path):
                return rule.label
        return UNKNOWN_LABEL
    if record.category in (PathCategory.SYSTEM.value,
                           PathCategory.PYTHON_INTERPRETER.value):
        return os.path.basename(record.exe_path or "") or UNKNOWN_LABEL
    return UNKNOWN_LABEL


def apply_labels(records: Iterable[ProcessRecord],
                 rules: Sequence[LabelRule] = DEFAULT_LABEL_RULES,
                 ) -> list[tuple[ProcessRecord, str]]:
    """Label every record; labeling is a total function."""
    return [(record, label_for(record, rules)) for record in records]


@dataclass(frozen=True)
class UsageStat:
    key: str
    unique_users: int
    job_count: int
    process_count: int
    unique_variants: int

    @property
    def sort_key(self) -> tuple:
        return (-self.unique_users, -self.job_count, -self.process_count,
                -self.unique_variants, self.key)


def _aggregate(groups: dict[str, list[ProcessRecord]],
               variant_digest: str) -> list[UsageStat]:
    stats = []
    for key, recs in groups.items():
        users = {r.uid for r in recs if r.uid is not None}
        jobs = {r.jobid for r in recs}
        variants = {str(getattr(r, variant_digest))
                    for r in recs if getattr(r, variant_digest) is not None}
        stats.append(UsageStat(key, len(users), len(jobs), len(recs),
                               len(variants)))
    return sorted(stats, key=lambda s: s.sort_key)


def usage_stats(labeled: Iterable[tuple[ProcessRecord, str]], group_by: str,
                variant_digest: str = "fi_h") -> list[UsageStat]:
    """Aggregate users/jobs/processes/variants per group.

    ``group_by`` is one of ``exe_path``, ``label`` or ``interpreter``;
    ``variant_digest`` names the record digest column counted as distinct
    variants (``ob_h`` for system executables, ``fi_h`` for user software,
    ``script_h`` for interpreters).  Sorted descending by (unique users,
    job count, process count, unique variants).
    """
    if group_by not in ("exe_path", "label", "interpreter"):
        raise ValueError(f"unknown group_by: {group_by!r}")
    groups: dict[str, list[ProcessRecord]] = {}
    for record, label in labeled:
        if group_by == "exe_path":
            key = record.exe_path or "(unknown)"
        elif group_by == "label":
            key = label
        else:
            if record.category != PathCategory.PYTHON_INTERPRETER.value:
                continue
            key = os.path.basename(record.exe_path or "") or "(unknown)"
        groups.setdefault(key, []).append(record)
    return _aggregate(groups, variant_digest)


@dataclass(frozen=True)
class DeviationRow:
    """One OBJECTS_H variant of an executable versus the most common one."""

    objects_h: str
    process_count: int
    added: tuple[str, ...] | None
    removed: tuple[str, ...] | None
    available: bool  # False when no complete object list exists for the variant


def _complete_objects(recs: list[ProcessRecord]) -> list[str] | None:
    for record in recs:
        if record.objects is not None and "OBJECTS" not in record.completeness:
            return record.objects
    return None


def library_deviation_report(records: Iterable[ProcessRecord],
                             exe_path: str) -> list[DeviationRow]:
    """Distinct shared-object sets of one executable.

    Groups records by OBJECTS_H; reports each variant's process count and
    the symmetric difference of its object list against the most common
    variant's list.  Differences use only complete lists — a variant whose
    lists were all lost or partial is emitted with the difference marked
    unavailable.
    """
    groups: dict[str, list[ProcessRecord]] = {}
    for record in records:
        if record.exe_path == exe_path and record.ob_h is not None:
            groups.setdefault(str(record.ob_h), []).append(record)
    if not groups:
        return []
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    base_objects: list[str] | None = None
    for digest, recs in ordered:
        base_objects = _complete_objects(recs)
        if base_objects is not None:
            break
    rows = []
    for digest, recs in ordered:
        objects = _complete_objects(recs)
        if objects is None or base_objects is None:
            rows.append(DeviationRow(digest, len(recs), None, None, False))
            continue
        added = tuple(sorted(set(objects) - set(base_objects)))
        removed = tuple(sorted(set(base_objects) - set(objects)))
        rows.append(DeviationRow(digest, len(recs), added, removed, True))
    return rows


def tags_for_path(path: str,
                  substrings: Sequence[str] = DEFAULT_FILTER_SUBSTRINGS) -> str | None:
    """Combinatorial tag of one object path: matched substrings joined "-"."""
    matched = [s for s in substrings if s in path]
    return "-".join(matched) if matched else None


def filter_library_substrings(
    records: Iterable[ProcessRecord],
    substrings: Sequence[str] = DEFAULT_FILTER_SUBSTRINGS,
) -> list[UsageStat]:
    """Usage per combinatorial substring tag over loaded-object paths.

    A process counts toward a tag when any of its objects carries that tag;
    the variants column counts distinct executables (by path, falling back
    to the path hash).
    """
    if not substrings:
        raise ValueError("substring list must be non-empty")
    per_tag: dict[str, list[ProcessRecord]] = {}
    for record in records:
        if not record.objects:
            continue
        tags = {t for t in (tags_for_path(p, substrings)
                            for p in record.objects) if t}
        for tag in tags:
            per_tag.setdefault(tag, []).append(record)
    stats = []
    for tag, recs in per_tag.items():
        users = {r.uid for r in recs if r.uid is not None}
        jobs = {r.jobid for r in recs}
        exes = {r.exe_path or r.path_hash for r in recs}
        stats.append(UsageStat(tag, len(users), len(jobs), len(recs),
                               len(exes)))
    return sorted(stats, key=lambda s: s.sort_key)


@dataclass(frozen=True)
class SimilarityResult:
    candidate_key: str
    candidate_label: str
    scores: dict  # column -> int score, only for columns shared with target
    avg_sim: float

    def score_or_none(self, column: str) -> int | None:
        return self.scores.get(column)

    @property
    def avg_text(self) -> str:
        return f"{self.avg_sim:.1f}"


def average_similarity(scores: Sequence[int]) -> float:
    """Arithmetic mean of per-column scores; zeros are data and count."""
    return sum(scores) / len(scores)


def similarity_search(target: ProcessRecord,
                      labeled: Iterable[tuple[ProcessRecord, str]],
                      top_k: int = 10) -> list[SimilarityResult]:
    """Rank candidates by average fuzzy-digest similarity to the target.

    Per-column scores are computed over the six similarity columns for
    columns present in BOTH records; the average runs over exactly those
    shared columns (zero scores count — they are data, not absence).
    Candidates sharing no column, and the target itself, are skipped.
    Descending by average; ties broken by fi_h score then label.
    """
    results = []
    for record, label in labeled:
        if record.key == target.key:
            continue
        scores: dict[str, int] = {}
        for column in SIMILARITY_COLUMNS:
            mine = getattr(target, column)
            theirs = getattr(record, column)
            if mine is not None and theirs is not None:
                scores[column] = ctph_compare(mine, theirs)
        if not scores:
            continue
        avg = average_similarity(list(scores.values()))
        results.append(SimilarityResult(record.key_string(), label, scores, avg))
    results.sort(key=lambda r: (-r.avg_sim, -r.scores.get("fi_h", -1),
                                r.candidate_label, r.candidate_key))
    return results[:top_k]


def compiler_report(records: Iterable[ProcessRecord]) -> list[UsageStat]:
    """Usage grouped by the exact ordered set of compiler strings.

    Records whose compiler list was never collected (None) are skipped; a
    collected-but-empty list groups under "(none)".  Variants count
    distinct FILE_H digests.
    """
    groups: dict[str, list[ProcessRecord]] = {}
    for record in records:
        if record.compilers is None:
            continue
        key = " | ".join(record.compilers) if record.compilers else "(none)"
        groups.setdefault(key, []).append(record)
    return _aggregate(groups, "fi_h")


def python_report(records: Iterable[ProcessRecord],
                  ) -> tuple[list[UsageStat], list[UsageStat]]:
    """(interpreter stats, package stats).

    Interpreters are grouped by name with distinct SCRIPT_H digests as
    variants; packages aggregate users/jobs/processes plus distinct
    SCRIPT_H digests of the processes that imported them.
    """
    interp_groups: dict[str, list[ProcessRecord]] = {}
    package_groups: dict[str, list[ProcessRecord]] = {}
    for record in records:
        if record.category == PathCategory.PYTHON_INTERPRETER.value:
            name = os.path.basename(record.exe_path or "") or "(unknown)"
            interp_groups.setdefault(name, []).append(record)
        for package in record.python_packages:
            package_groups.setdefault(package, []).append(record)
    return (_aggregate(interp_groups, "script_h"),
            _aggregate(package_groups, "script_h"))


def dependency_matrix(labeled: Iterable[tuple[ProcessRecord, str]],
                      axis: str) -> tuple[list[str], list[str], list[list[int]]]:
    """Binary usage matrix label x item.

    ``axis`` selects the item universe: ``compilers`` (compiler
    identification strings) or ``libraries`` (loaded-object paths).  A cell
    is 1 iff any record of that label contains the item.
    """
    if axis == "compilers":
        attr = "compilers"
    elif axis == "libraries":
        attr = "objects"
    else:
        raise ValueError(f"unknown axis: {axis!r} (use compilers or libraries)")
    by_label: dict[str, set[str]] = {}
    items: set[str] = set()
    for record, label in labeled:
        values = getattr(record, attr)
        bucket = by_label.setdefault(label, set())
        if values:
            bucket.update(values)
            items.update(values)
    labels = sorted(by_label)
    item_list = sorted(items)
    cells = [[1 if item in by_label[label] else 0 for item in item_list]
             for label in labels]
    return labels, item_list, cells
