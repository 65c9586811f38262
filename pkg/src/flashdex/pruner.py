"""Corpus pruning: fact extraction, citation extraction, and their fusion.

All three strategies retain a subset of the input sentences keyed by
(doc_id, sent_idx); retained sentences keep their original text and ordinal,
and documents left empty are dropped (their ids land in the report's
tombstone list so stats stay accountable).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import Corpus, CorpusStats, Sentence, rebuild

DEFAULT_THRESHOLD = 0.5

_ALNUM_TOKEN = re.compile(r"[0-9A-Za-z]+")
_YEAR = re.compile(r"(?<![0-9])[0-9]{4}(?![0-9])")
_MONTHS = (
    "january", "february", "march", "april", "may", "june",
    "july", "august", "september", "october", "november", "december",
)


class PruneError(Exception):
    pass


@dataclass(frozen=True)
class PruneReport:
    method: str  # "fe" | "ce" | "fu"
    before: CorpusStats
    after: CorpusStats
    size_reduction_pct: float
    sentence_reduction_pct: float
    dropped_doc_ids: tuple[str, ...]

    def to_json(self) -> str:
        payload = {
            "method": self.method,
            "before": vars(self.before),
            "after": vars(self.after),
            "size_reduction_pct": self.size_reduction_pct,
            "sentence_reduction_pct": self.sentence_reduction_pct,
            "dropped_doc_ids": list(self.dropped_doc_ids),
        }
        return json.dumps(payload, indent=2)


def heuristic_claim_score(sentence: Sentence) -> float:
    """Deterministic check-worthiness proxy.

    Tokens are alphanumeric runs.  +0.4 for a digit, +0.3 for a capitalized
    token after the first, +0.2 for six or more tokens, +0.1 for a month name
    or four-digit year; capped at 1.0.
    """
    text = sentence.text
    tokens = _ALNUM_TOKEN.findall(text)
    score = 0.0
    if any(ch.isdigit() for ch in text):
        score += 0.4
    if any(tok[0].isupper() for tok in tokens[1:]):
        score += 0.3
    if len(tokens) >= 6:
        score += 0.2
    lowered = text.lower()
    if _YEAR.search(text) or any(m in lowered for m in _MONTHS):
        score += 0.1
    return min(score, 1.0)


def load_score_table(path: str | Path) -> dict[tuple[str, int], float]:
    """Read a TSV score file: doc_id <TAB> sent_idx <TAB> score."""
    table: dict[tuple[str, int], float] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise PruneError(f"score file line {lineno}: expected 3 fields")
            doc_id, sent_idx, score = parts
            value = float(score)
            if not 0.0 <= value <= 1.0:
                raise PruneError(f"score file line {lineno}: score {value} outside [0, 1]")
            table[(doc_id, int(sent_idx))] = value
    return table


def _resolve_score(
    doc_id: str,
    sentence: Sentence,
    scores: dict[tuple[str, int], float] | None,
    heuristic_fallback: bool,
) -> float:
    if scores is not None:
        key = (doc_id, sentence.sent_idx)
        if key in scores:
            return scores[key]
        if not heuristic_fallback:
            raise PruneError(f"no claim score for {doc_id!r} sentence {sentence.sent_idx}")
    return heuristic_claim_score(sentence)


def fact_extract(
    corpus: Corpus,
    threshold: float = DEFAULT_THRESHOLD,
    scores: dict[tuple[str, int], float] | None = None,
    heuristic_fallback: bool = True,
) -> Corpus:
    """Keep sentences whose claim score is >= threshold (FE)."""
    if not 0.0 <= threshold <= 1.0:
        raise PruneError(f"threshold {threshold} outside [0, 1]")
    docs = []
    for doc in corpus.documents:
        kept = []
        for sent in doc.sentences:
            value = _resolve_score(doc.doc_id, sent, scores, heuristic_fallback)
            if value >= threshold:
                kept.append(replace(sent, claim_score=value))
        if kept:
            docs.append(replace(doc, sentences=tuple(kept)))
    return rebuild(docs)


def citation_extract(corpus: Corpus) -> Corpus:
    """Keep sentences that carry a citation marker (CE)."""
    docs = []
    for doc in corpus.documents:
        kept = tuple(s for s in doc.sentences if s.cited)
        if kept:
            docs.append(replace(doc, sentences=kept))
    return rebuild(docs)


def fuse(
    corpus: Corpus,
    threshold: float = DEFAULT_THRESHOLD,
    scores: dict[tuple[str, int], float] | None = None,
    heuristic_fallback: bool = True,
) -> Corpus:
    """Union of FE and CE retained sets (Fu), in source order."""
    fe_keys = fact_extract(corpus, threshold, scores, heuristic_fallback).sentence_keys()
    docs = []
    for doc in corpus.documents:
        kept = tuple(
            s
            for s in doc.sentences
            if s.cited or (doc.doc_id, s.sent_idx) in fe_keys
        )
        if kept:
            docs.append(replace(doc, sentences=kept))
    return rebuild(docs)


def prune(
    corpus: Corpus,
    method: str,
    threshold: float = DEFAULT_THRESHOLD,
    scores: dict[tuple[str, int], float] | None = None,
    heuristic_fallback: bool = True,
) -> Corpus:
    method = method.lower()
    if method == "fe":
        return fact_extract(corpus, threshold, scores, heuristic_fallback)
    if method == "ce":
        return citation_extract(corpus)
    if method == "fu":
        return fuse(corpus, threshold, scores, heuristic_fallback)
    raise PruneError(f"unknown prune method {method!r} (expected fe, ce, or fu)")


def report(before: Corpus, after: Corpus, method: str) -> PruneReport:
    """Reduction percentages of the pruned corpus relative to its source."""
    if before.stats.text_bytes == 0:
        raise PruneError("cannot report reductions against an empty corpus")
    size_pct = 100.0 * (1.0 - after.stats.text_bytes / before.stats.text_bytes)
    if before.stats.n_sentences == 0:
        sent_pct = 0.0
    else:
        sent_pct = 100.0 * (1.0 - after.stats.n_sentences / before.stats.n_sentences)
    after_ids = {d.doc_id for d in after.documents}
    dropped = tuple(d.doc_id for d in before.documents if d.doc_id not in after_ids)
    return PruneReport(
        method=method.lower(),
        before=before.stats,
        after=after.stats,
        size_reduction_pct=size_pct,
        sentence_reduction_pct=sent_pct,
        dropped_doc_ids=dropped,
    )
