"""Sentence-level corpus store.

Ingests JSONL document dumps into an immutable corpus of citation-flagged
sentences and persists it in the binary "FDXC" store format.  Sentence text is
NFC-normalized with whitespace runs collapsed to single spaces so that byte
accounting is stable across machines.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import _binio
from ._binio import FormatError

CORPUS_MAGIC = b"FDXC"
CORPUS_VERSION = 1

# Wikipedia-style citation markers: [12], <ref ...>...</ref>, <ref ... />.
# Self-closing refs are stripped before paired refs so that a dangling
# self-closing tag cannot swallow text up to an unrelated </ref>.
DEFAULT_CITATION_PATTERNS = (
    r"<ref[^>]*/>",
    r"<ref[^>]*>.*?</ref>",
    r"\[\d+\]",
)

_SENTENCE_TERMINATORS = ".!?"


class CorpusError(Exception):
    """Raised for malformed input dumps or inconsistent corpora."""


@dataclass(frozen=True)
class Sentence:
    """One indexing unit: `sent_idx` is the ordinal in the source document
    and is preserved verbatim through pruning (pruned corpora may have gaps)."""

    sent_idx: int
    text: str
    cited: bool = False
    claim_score: float | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise CorpusError("sentence text must be non-empty")
        if self.claim_score is not None and not 0.0 <= self.claim_score <= 1.0:
            raise CorpusError(f"claim_score {self.claim_score} outside [0, 1]")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise CorpusError("doc_id must be non-empty")


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    n_sentences: int
    text_bytes: int


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    stats: CorpusStats = field(init=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
        object.__setattr__(self, "stats", compute_stats(self.documents))

    def sentence_keys(self) -> set[tuple[str, int]]:
        return {
            (doc.doc_id, sent.sent_idx)
            for doc in self.documents
            for sent in doc.sentences
        }


def compute_stats(documents: Sequence[Document]) -> CorpusStats:
    n_sentences = sum(len(d.sentences) for d in documents)
    text_bytes = sum(
        len(s.text.encode("utf-8")) for d in documents for s in d.sentences
    )
    return CorpusStats(
        n_docs=len(documents), n_sentences=n_sentences, text_bytes=text_bytes
    )


def normalize_text(text: str) -> str:
    """NFC-normalize and collapse whitespace runs to a single space."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def split_sentences(text: str) -> list[str]:
    """Split on '.', '!', '?' followed by a space and an uppercase letter.

    A '.' sitting inside a token with a digit immediately before it (as in
    "3.5") is never a boundary.  The concatenation of the results, joined by
    single spaces, equals the whitespace-collapsed input.
    """
    collapsed = " ".join(text.split())
    if not collapsed:
        return []
    out: list[str] = []
    start = 0
    for i, ch in enumerate(collapsed):
        if ch not in _SENTENCE_TERMINATORS:
            continue
        nxt = collapsed[i + 1] if i + 1 < len(collapsed) else ""
        after = collapsed[i + 2] if i + 2 < len(collapsed) else ""
        if ch == "." and i > 0 and collapsed[i - 1].isdigit() and nxt not in ("", " "):
            continue  # decimal point inside a token
        if nxt == " " and after.isupper():
            out.append(collapsed[start:i + 1])
            start = i + 2
    if start < len(collapsed):
        out.append(collapsed[start:])
    return out


def detect_citation(
    raw_sentence: str, patterns: Sequence[str] = DEFAULT_CITATION_PATTERNS
) -> tuple[str, bool]:
    """Strip citation markers and report whether any was present.

    Whitespace directly preceding a marker is removed with it, so
    "B [1]." cleans to "B." rather than "B .".
    """
    cited = False
    text = raw_sentence
    for pattern in patterns:
        stripped = re.sub(r"\s*(?:" + pattern + r")", "", text, flags=re.DOTALL)
        if stripped != text:
            cited = True
            text = stripped
    return normalize_text(text), cited


def ingest(
    input_path: str | Path,
    fmt: str = "jsonl",
    citation_patterns: Sequence[str] = DEFAULT_CITATION_PATTERNS,
) -> Corpus:
    """Read a JSONL dump (one document per line) into a Corpus.

    Each record carries either "text" (split here) or "sentences" (pre-split);
    "sentences" wins when both are present.  Sentences that are empty after
    citation stripping are dropped; orphaned documents keep an empty sentence
    list only when the source record itself had no usable text.
    """
    if fmt != "jsonl":
        raise CorpusError(f"unsupported input format {fmt!r}")
    path = Path(input_path)
    documents: list[Document] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            try:
                doc = _record_to_document(record, citation_patterns)
            except (KeyError, TypeError, AttributeError, CorpusError) as exc:
                raise CorpusError(f"line {lineno}: malformed record ({exc})") from exc
            if doc.doc_id in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate doc_id {doc.doc_id!r}")
            seen_ids.add(doc.doc_id)
            documents.append(doc)
    return Corpus(documents=tuple(documents))


def _record_to_document(
    record: dict, citation_patterns: Sequence[str]
) -> Document:
    doc_id = str(record["id"])
    if not doc_id:
        raise CorpusError("empty doc id")
    title = normalize_text(str(record.get("title", "")))
    if "sentences" in record:
        raw_sentences = [str(s) for s in record["sentences"]]
    else:
        raw_sentences = split_sentences(str(record.get("text", "")))
    sentences: list[Sentence] = []
    for raw in raw_sentences:
        clean, cited = detect_citation(raw, citation_patterns)
        if not clean:
            continue
        sentences.append(Sentence(sent_idx=len(sentences), text=clean, cited=cited))
    return Document(doc_id=doc_id, title=title, sentences=tuple(sentences))


def rebuild(documents: Iterable[Document]) -> Corpus:
    """Assemble a corpus from documents, recomputing stats."""
    return Corpus(documents=tuple(documents))


def with_claim_scores(
    corpus: Corpus, scores: dict[tuple[str, int], float]
) -> Corpus:
    """Return a copy with claim_score set where (doc_id, sent_idx) is present."""
    docs = []
    for doc in corpus.documents:
        sents = tuple(
            replace(s, claim_score=scores[(doc.doc_id, s.sent_idx)])
            if (doc.doc_id, s.sent_idx) in scores
            else s
            for s in doc.sentences
        )
        docs.append(replace(doc, sentences=sents))
    return Corpus(documents=tuple(docs))


def save(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical FDXC serialization (see README for the layout)."""
    with Path(path).open("wb") as fh:
        _binio.write_magic(fh, CORPUS_MAGIC, CORPUS_VERSION)
        _binio.write_u64(fh, corpus.stats.n_docs)
        _binio.write_u64(fh, corpus.stats.n_sentences)
        _binio.write_u64(fh, corpus.stats.text_bytes)
        for doc in corpus.documents:
            _binio.write_str(fh, doc.doc_id)
            _binio.write_str(fh, doc.title)
            _binio.write_u32(fh, len(doc.sentences))
            for sent in doc.sentences:
                _binio.write_u32(fh, sent.sent_idx)
                _binio.write_str(fh, sent.text)
                _binio.write_u8(fh, 1 if sent.cited else 0)
                if sent.claim_score is None:
                    _binio.write_u8(fh, 0)
                else:
                    _binio.write_u8(fh, 1)
                    _binio.write_f64(fh, sent.claim_score)


def load(path: str | Path) -> Corpus:
    with Path(path).open("rb") as fh:
        _binio.check_magic(fh, CORPUS_MAGIC, CORPUS_VERSION)
        n_docs = _binio.read_u64(fh)
        n_sentences = _binio.read_u64(fh)
        text_bytes = _binio.read_u64(fh)
        documents = []
        for _ in range(n_docs):
            doc_id = _binio.read_str(fh)
            title = _binio.read_str(fh)
            n_sents = _binio.read_u32(fh)
            sentences = []
            for _ in range(n_sents):
                sent_idx = _binio.read_u32(fh)
                text = _binio.read_str(fh)
                cited = _binio.read_u8(fh) == 1
                claim_score = _binio.read_f64(fh) if _binio.read_u8(fh) == 1 else None
                sentences.append(
                    Sentence(
                        sent_idx=sent_idx,
                        text=text,
                        cited=cited,
                        claim_score=claim_score,
                    )
                )
            documents.append(
                Document(doc_id=doc_id, title=title, sentences=tuple(sentences))
            )
    corpus = Corpus(documents=tuple(documents))
    stored = CorpusStats(n_docs=n_docs, n_sentences=n_sentences, text_bytes=text_bytes)
    if corpus.stats != stored:
        raise FormatError(
            f"corrupt corpus store: header stats {stored} != recounted {corpus.stats}"
        )
    return corpus
