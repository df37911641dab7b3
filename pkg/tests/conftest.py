"""Shared fixtures.

The fuzzy-hash corpus is not committed as bytes; it is regenerated from the
fully seeded generator in ``scripts/gen_corpus.py`` and verified against the
committed SHA-256 manifest before any test uses it.  Expectation tables
(``corpus_digests.tsv``, ``corpus_scores.tsv``, ``mutation_trials.tsv``)
were captured from an independently compiled reference ssdeep CLI and are
committed under ``tests/data/``.
"""

from __future__ import annotations

import importlib.util
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(__file__).resolve().parent / "data"
SCRIPTS_DIR = REPO_ROOT / "scripts"


def load_script(name: str):
    """Import a repository script as a throwaway module."""
    spec = importlib.util.spec_from_file_location(name, SCRIPTS_DIR / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    sys.modules.setdefault(f"_siren_script_{name}", module)
    spec.loader.exec_module(module)
    return module


def read_tsv(path: Path) -> list[list[str]]:
    return [line.split("\t") for line in path.read_text().splitlines()]


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def gen_corpus():
    return load_script("gen_corpus")


@pytest.fixture(scope="session")
def corpus(gen_corpus) -> dict[str, bytes]:
    """Regenerated corpus, pinned byte-for-byte by the committed manifest."""
    files = gen_corpus.build_corpus()
    problems = gen_corpus.verify_manifest(files, DATA_DIR / "corpus_manifest.tsv")
    assert not problems, f"corpus drifted from committed manifest: {problems}"
    return files


@pytest.fixture(scope="session")
def corpus_names(corpus) -> list[str]:
    return list(corpus)


@pytest.fixture(scope="session")
def reference_digests(data_dir) -> dict[str, str]:
    """name -> digest captured from the reference ssdeep CLI."""
    return {name: digest for name, digest
            in read_tsv(data_dir / "corpus_digests.tsv")}


@pytest.fixture(scope="session")
def reference_scores(data_dir) -> dict[tuple[int, int], int]:
    """(i, j) index pairs into the corpus order -> reference score."""
    return {(int(i), int(j)): int(score) for i, j, score
            in read_tsv(data_dir / "corpus_scores.tsv")}
