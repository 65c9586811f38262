"""BM25 inverted index over a corpus, at document or sentence granularity.

Scoring uses the Robertson/Okapi form with the +1-inside-log smoothed idf,
so every term contribution is non-negative even on tiny corpora.  Query
evaluation is term-at-a-time with bounded-heap top-k selection and is exactly
equivalent to exhaustive scoring (ties broken by unit id ascending).
"""

from __future__ import annotations

import heapq
import math
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import _binio
from .corpus import Corpus

SPARSE_MAGIC = b"FDXS"
SPARSE_VERSION = 1

_TOKEN = re.compile(r"[^\W_]+")


class SparseIndexError(Exception):
    pass


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise SparseIndexError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise SparseIndexError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float


@dataclass
class InvertedIndex:
    vocabulary: dict[str, int]           # term -> term_id (sorted-term order)
    postings: list[list[tuple[int, int]]]  # term_id -> [(doc_ord, tf) ascending]
    doc_len: list[int]
    doc_ids: list[str]
    n_docs: int
    avgdl: float


def tokenize(text: str) -> list[str]:
    """Lowercased NFC alphanumeric runs (underscore excluded)."""
    return _TOKEN.findall(unicodedata.normalize("NFC", text).lower())


def build(corpus: Corpus, granularity: str = "sentence") -> InvertedIndex:
    """Index one unit per document ("document") or per sentence ("sentence").

    Sentence units are identified as "doc_id#sent_idx" with the sentence's
    original ordinal, so ids stay stable across pruning.
    """
    units: list[tuple[str, str]] = []
    if granularity in ("document", "doc"):
        for doc in corpus.documents:
            units.append((doc.doc_id, " ".join(s.text for s in doc.sentences)))
    elif granularity in ("sentence", "sent"):
        for doc in corpus.documents:
            for sent in doc.sentences:
                units.append((f"{doc.doc_id}#{sent.sent_idx}", sent.text))
    else:
        raise SparseIndexError(f"unknown granularity {granularity!r}")
    if not units:
        raise SparseIndexError("cannot index an empty corpus")

    doc_ids = [unit_id for unit_id, _ in units]
    doc_len: list[int] = []
    term_docs: dict[str, list[tuple[int, int]]] = {}
    for ord_, (_, text) in enumerate(units):
        counts: dict[str, int] = {}
        tokens = tokenize(text)
        doc_len.append(len(tokens))
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            term_docs.setdefault(term, []).append((ord_, tf))

    vocabulary = {term: tid for tid, term in enumerate(sorted(term_docs))}
    postings: list[list[tuple[int, int]]] = [[] for _ in vocabulary]
    for term, plist in term_docs.items():
        postings[vocabulary[term]] = plist  # built in ascending doc_ord order

    n_docs = len(units)
    avgdl = sum(doc_len) / n_docs
    return InvertedIndex(
        vocabulary=vocabulary,
        postings=postings,
        doc_len=doc_len,
        doc_ids=doc_ids,
        n_docs=n_docs,
        avgdl=avgdl,
    )


def idf(index: InvertedIndex, term: str) -> float:
    tid = index.vocabulary.get(term)
    if tid is None:
        return 0.0
    df = len(index.postings[tid])
    return math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))


def bm25_score(
    index: InvertedIndex,
    params: BM25Params,
    query_terms: Sequence[str],
    doc_ord: int,
) -> float:
    """Sum of per-term contributions; repeated query terms count repeatedly."""
    if not 0 <= doc_ord < index.n_docs:
        raise SparseIndexError(f"doc_ord {doc_ord} out of range")
    if index.avgdl == 0:
        return 0.0
    dl = index.doc_len[doc_ord]
    norm = params.k1 * (1.0 - params.b + params.b * dl / index.avgdl)
    score = 0.0
    for term in query_terms:
        tid = index.vocabulary.get(term)
        if tid is None:
            continue
        plist = index.postings[tid]
        tf = _posting_tf(plist, doc_ord)
        if tf == 0:
            continue
        df = len(plist)
        term_idf = math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))
        score += term_idf * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def _posting_tf(plist: list[tuple[int, int]], doc_ord: int) -> int:
    lo, hi = 0, len(plist)
    while lo < hi:
        mid = (lo + hi) // 2
        if plist[mid][0] < doc_ord:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(plist) and plist[lo][0] == doc_ord:
        return plist[lo][1]
    return 0


def search(
    index: InvertedIndex,
    params: BM25Params,
    query: str,
    k: int,
) -> list[SearchResult]:
    """Top-k by BM25, ties by unit id ascending; zero-score units are omitted."""
    if k < 1:
        raise SparseIndexError(f"k must be >= 1, got {k}")
    query_terms = tokenize(query)
    if not query_terms or index.avgdl == 0:
        return []
    accum: dict[int, float] = {}
    for term in query_terms:
        tid = index.vocabulary.get(term)
        if tid is None:
            continue
        plist = index.postings[tid]
        df = len(plist)
        term_idf = math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))
        top = params.k1 + 1.0
        for doc_ord, tf in plist:
            dl = index.doc_len[doc_ord]
            norm = params.k1 * (1.0 - params.b + params.b * dl / index.avgdl)
            accum[doc_ord] = accum.get(doc_ord, 0.0) + term_idf * tf * top / (tf + norm)
    best = heapq.nsmallest(
        k,
        accum.items(),
        key=lambda item: (-item[1], index.doc_ids[item[0]]),
    )
    return [SearchResult(doc_id=index.doc_ids[ord_], score=s) for ord_, s in best]


def save(index: InvertedIndex, path: str | Path) -> None:
    """FDXS layout: vocabulary, delta-encoded postings, then the doc table."""
    with Path(path).open("wb") as fh:
        _binio.write_magic(fh, SPARSE_MAGIC, SPARSE_VERSION)
        terms = sorted(index.vocabulary, key=index.vocabulary.get)
        _binio.write_u64(fh, len(terms))
        for term in terms:
            _binio.write_str(fh, term)
        for tid in range(len(terms)):
            plist = index.postings[tid]
            _binio.write_u64(fh, len(plist))
            prev = 0
            for doc_ord, tf in plist:
                _binio.write_u32(fh, doc_ord - prev)
                _binio.write_u32(fh, tf)
                prev = doc_ord
        _binio.write_u64(fh, index.n_docs)
        for ord_ in range(index.n_docs):
            _binio.write_str(fh, index.doc_ids[ord_])
            _binio.write_u64(fh, index.doc_len[ord_])


def load(path: str | Path) -> InvertedIndex:
    with Path(path).open("rb") as fh:
        _binio.check_magic(fh, SPARSE_MAGIC, SPARSE_VERSION)
        n_terms = _binio.read_u64(fh)
        terms = [_binio.read_str(fh) for _ in range(n_terms)]
        postings: list[list[tuple[int, int]]] = []
        for _ in range(n_terms):
            df = _binio.read_u64(fh)
            plist = []
            doc_ord = 0
            for _ in range(df):
                doc_ord += _binio.read_u32(fh)
                tf = _binio.read_u32(fh)
                plist.append((doc_ord, tf))
            postings.append(plist)
        n_docs = _binio.read_u64(fh)
        doc_ids = []
        doc_len = []
        for _ in range(n_docs):
            doc_ids.append(_binio.read_str(fh))
            doc_len.append(_binio.read_u64(fh))
    vocabulary = {term: tid for tid, term in enumerate(terms)}
    avgdl = sum(doc_len) / n_docs if n_docs else 0.0
    return InvertedIndex(
        vocabulary=vocabulary,
        postings=postings,
        doc_len=doc_len,
        doc_ids=doc_ids,
        n_docs=n_docs,
        avgdl=avgdl,
    )
