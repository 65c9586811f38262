"""Shared builders for randomized corpora and embedding fixtures, plus the
acceptance-suite reporter that prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import numpy as np
import pytest

from flashdex.corpus import Corpus, Document, Sentence

_ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def record_acceptance(item_nodeid: str, outcome: str) -> None:
    import re

    match = re.search(r"test_criterion_(\d+)_(\w+)", item_nodeid)
    if match:
        number, slug = match.groups()
        _ACCEPTANCE_RESULTS[number] = (slug.replace("_", " "), outcome)


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call":
        record_acceptance(report.nodeid, "PASS" if report.passed else "FAIL")
    elif report.when == "setup" and (report.failed or report.skipped):
        record_acceptance(report.nodeid, "SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS, key=int):
        slug, outcome = _ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {int(number):2d} [{outcome}] {slug}")

WORDS = (
    "paris berlin oslo river bridge treaty energy museum harbor census "
    "physics quartz welding union market collapse reform votes tax rail "
    "glacier harvest mineral copper debate senate verdict archive print"
).split()


def random_corpus(
    rng: np.random.Generator,
    n_docs: int,
    max_sentences: int = 6,
    max_tokens: int = 9,
    cited_prob: float = 0.4,
) -> Corpus:
    docs = []
    for d in range(n_docs):
        n_sents = int(rng.integers(1, max_sentences + 1))
        sentences = []
        for s in range(n_sents):
            n_tok = int(rng.integers(1, max_tokens + 1))
            tokens = [WORDS[int(i)] for i in rng.integers(0, len(WORDS), n_tok)]
            if rng.random() < 0.5:
                tokens.append(str(int(rng.integers(1800, 2030))))
            sentences.append(
                Sentence(
                    sent_idx=s,
                    text=" ".join(tokens) + ".",
                    cited=bool(rng.random() < cited_prob),
                )
            )
        docs.append(Document(doc_id=f"d{d:05d}", title=f"T{d}", sentences=tuple(sentences)))
    return Corpus(documents=tuple(docs))


def product_clustered(
    rng: np.random.Generator,
    n: int,
    d: int,
    m: int,
    n_sub: int,
    n_clusters: int,
    spread: float = 0.05,
) -> np.ndarray:
    """Clustered vectors whose cluster centers have product structure: each
    of the m subspaces draws from n_sub distinct subcenters, so a K >= n_sub
    codebook can represent the centers exactly and quantization error is
    dominated by the within-cluster spread."""
    dsub = d // m
    subcenters = rng.standard_normal((m, n_sub, dsub))
    choice = rng.integers(0, n_sub, (n_clusters, m))
    centers = np.concatenate([subcenters[j][choice[:, j]] for j in range(m)], axis=1)
    labels = rng.integers(0, n_clusters, n)
    return (centers[labels] + rng.standard_normal((n, d)) * spread).astype(np.float32)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
