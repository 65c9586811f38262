"""Effectiveness metrics and the retrieval latency harness.

Metrics are binary-relevance Recall@k, nDCG@k, and support-weighted F1.
Queries whose relevant set is empty are excluded from averages (the recall
denominator would be undefined) and counted in a logged warning.

The harness times each query with a monotonic clock after untimed warmup
rounds, checksums every result so timing runs double as correctness runs, and
reports the median as the headline statistic (the mean is kept for
comparability with wall-clock tables).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

logger = logging.getLogger(__name__)

Qrels = dict[str, set[str]]
RunFile = dict[str, list[tuple[str, float]]]


class EvalError(Exception):
    pass


# ---------------------------------------------------------------------------
# TREC interchange files
# ---------------------------------------------------------------------------

def read_qrels(path: str | Path) -> Qrels:
    """TREC qrels: `qid 0 docid rel`, binary (rel > 0 means relevant)."""
    qrels: Qrels = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise EvalError(f"qrels line {lineno}: expected 4 fields")
            qid, _, docid, rel = parts
            if not qid:
                raise EvalError(f"qrels line {lineno}: empty qid")
            qrels.setdefault(qid, set())
            if int(rel) > 0:
                qrels[qid].add(docid)
    return qrels


def read_run(path: str | Path) -> RunFile:
    """TREC run: `qid Q0 docid rank score tag`; re-sorted canonically."""
    run: RunFile = {}
    seen: dict[str, set[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise EvalError(f"run line {lineno}: expected 6 fields")
            qid, _, docid, _, score, _ = parts
            if docid in seen.setdefault(qid, set()):
                raise EvalError(f"run line {lineno}: duplicate doc {docid!r} for {qid!r}")
            seen[qid].add(docid)
            run.setdefault(qid, []).append((docid, float(score)))
    for qid in run:
        run[qid].sort(key=lambda item: (-item[1], item[0]))
    return run


def write_run(run: RunFile, path: str | Path, tag: str = "flashdex") -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in run:
            ranked = sorted(run[qid], key=lambda item: (-item[1], item[0]))
            for rank, (docid, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {docid} {rank} {score!r} {tag}\n")


# ---------------------------------------------------------------------------
# Effectiveness metrics
# ---------------------------------------------------------------------------

def _scored_qids(run: RunFile, qrels: Qrels) -> list[str]:
    missing = [qid for qid in run if qid not in qrels]
    if missing:
        raise EvalError(f"run qids missing from qrels: {missing[:5]}")
    empty = [qid for qid in run if not qrels[qid]]
    if empty:
        logger.warning(
            "%d queries have no relevant documents and are excluded", len(empty)
        )
    return [qid for qid in run if qrels[qid]]


def recall_at_k(run: RunFile, qrels: Qrels, k: int) -> float:
    """Mean over queries of |top-k intersect relevant| / |relevant|."""
    qids = _scored_qids(run, qrels)
    if not qids:
        raise EvalError("no scorable queries")
    total = 0.0
    for qid in qids:
        top = {docid for docid, _ in run[qid][:k]}
        total += len(top & qrels[qid]) / len(qrels[qid])
    return total / len(qids)


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int) -> float:
    """Binary-gain DCG with a log2(rank + 1) discount, normalized by the
    ideal DCG, averaged over queries."""
    qids = _scored_qids(run, qrels)
    if not qids:
        raise EvalError("no scorable queries")
    total = 0.0
    for qid in qids:
        relevant = qrels[qid]
        dcg = 0.0
        for rank, (docid, _) in enumerate(run[qid][:k], start=1):
            if docid in relevant:
                dcg += 1.0 / math.log2(rank + 1)
        ideal = sum(
            1.0 / math.log2(rank + 1)
            for rank in range(1, min(len(relevant), k) + 1)
        )
        total += dcg / ideal
    return total / len(qids)


def weighted_f1(predictions: dict[str, str], gold: dict[str, str]) -> float:
    """Per-class F1 weighted by gold-class support."""
    if not gold:
        raise EvalError("empty gold labels")
    if set(predictions) != set(gold):
        raise EvalError("prediction and gold key sets differ")
    classes = sorted(set(gold.values()) | set(predictions.values()))
    total = 0.0
    for cls in classes:
        tp = sum(1 for key, label in gold.items() if label == cls and predictions[key] == cls)
        pred_n = sum(1 for label in predictions.values() if label == cls)
        gold_n = sum(1 for label in gold.values() if label == cls)
        precision = tp / pred_n if pred_n else 0.0
        recall = tp / gold_n if gold_n else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += f1 * gold_n
    return total / len(gold)


# ---------------------------------------------------------------------------
# Latency harness
# ---------------------------------------------------------------------------

@dataclass
class LatencyReport:
    label: str
    warmup: int
    repeats: int
    samples_ms: list[list[float]]  # [query][repeat]
    checksums: list[str]           # one per query, stable across repeats
    mean_ms: float
    median_ms: float
    p95_ms: float
    speedup_vs: tuple[str, float] | None = None

    def per_query_median_ms(self) -> list[float]:
        return [statistics.median(s) for s in self.samples_ms]

    def to_json(self) -> str:
        payload = {
            "label": self.label,
            "warmup": self.warmup,
            "repeats": self.repeats,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "per_query_median_ms": self.per_query_median_ms(),
            "checksums": self.checksums,
            "samples_ms": self.samples_ms,
        }
        if self.speedup_vs is not None:
            payload["speedup_vs"] = {
                "baseline": self.speedup_vs[0],
                "ratio": self.speedup_vs[1],
            }
        return json.dumps(payload, indent=2)

    @staticmethod
    def from_json(text: str) -> "LatencyReport":
        payload = json.loads(text)
        speedup_vs = None
        if payload.get("speedup_vs"):
            speedup_vs = (
                payload["speedup_vs"]["baseline"],
                payload["speedup_vs"]["ratio"],
            )
        return LatencyReport(
            label=payload["label"],
            warmup=payload["warmup"],
            repeats=payload["repeats"],
            samples_ms=payload["samples_ms"],
            checksums=payload["checksums"],
            mean_ms=payload["mean_ms"],
            median_ms=payload["median_ms"],
            p95_ms=payload["p95_ms"],
            speedup_vs=speedup_vs,
        )


def _checksum(result: object) -> str:
    return hashlib.blake2b(repr(result).encode("utf-8"), digest_size=8).hexdigest()


def bench(
    search_fn: Callable[[object], object],
    queries: Sequence[object],
    warmup: int,
    repeats: int,
    label: str = "search",
) -> LatencyReport:
    """Time each query `repeats` times after `warmup` untimed full passes.

    Queries run sequentially on one worker; checksums are computed outside
    the timed sections and must agree across repeats of the same query.
    """
    if repeats < 1:
        raise EvalError(f"repeats must be >= 1, got {repeats}")
    if warmup < 0:
        raise EvalError(f"warmup must be >= 0, got {warmup}")
    if not queries:
        raise EvalError("no queries to benchmark")
    for _ in range(warmup):
        for query in queries:
            search_fn(query)
    samples_ms: list[list[float]] = []
    checksums: list[str] = []
    for query in queries:
        times: list[float] = []
        checksum: str | None = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            result = search_fn(query)
            t1 = time.perf_counter()
            times.append((t1 - t0) * 1000.0)
            digest = _checksum(result)
            if checksum is None:
                checksum = digest
            elif digest != checksum:
                raise EvalError(
                    f"nondeterministic search results for query {query!r}"
                )
        samples_ms.append(times)
        checksums.append(checksum or "")
    flat = [t for times in samples_ms for t in times]
    return LatencyReport(
        label=label,
        warmup=warmup,
        repeats=repeats,
        samples_ms=samples_ms,
        checksums=checksums,
        mean_ms=statistics.fmean(flat),
        median_ms=statistics.median(flat),
        p95_ms=_percentile(flat, 95.0),
    )


def _percentile(values: Iterable[float], pct: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise EvalError("no samples")
    if len(ordered) == 1:
        return ordered[0]
    rank = (pct / 100.0) * (len(ordered) - 1)
    lo = int(math.floor(rank))
    hi = int(math.ceil(rank))
    if lo == hi:
        return ordered[lo]
    frac = rank - lo
    return ordered[lo] * (1.0 - frac) + ordered[hi] * frac


def speedup(candidate: LatencyReport, baseline: LatencyReport) -> float:
    """baseline median / candidate median (> 1 means the candidate is faster)."""
    if not candidate.samples_ms or not baseline.samples_ms:
        raise EvalError("cannot compute speedup from an empty report")
    if candidate.median_ms == 0:
        raise EvalError("candidate median latency is zero")
    if baseline.median_ms == 0:
        raise EvalError("baseline median latency is zero")
    return baseline.median_ms / candidate.median_ms
