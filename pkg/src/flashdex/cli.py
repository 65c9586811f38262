"""Command-line entry point orchestrating the full pipeline:
ingest -> prune -> embed -> index -> compress -> refine -> search -> eval -> bench.

Every artifact-producing stage writes a `<artifact>.manifest.json` sidecar.
A JSON config file can drive multi-stage runs (`flashdex run --config c.json`);
config keys mirror the CLI flags one-to-one and flags are filled from stage
entries.  Exit codes: 0 success, 2 usage error, 3 data/format error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import compressed as compressed_mod
from . import corpus as corpus_mod
from . import dense as dense_mod
from . import evalbench
from . import pruner as pruner_mod
from . import refine as refine_mod
from . import sparse as sparse_mod
from ._binio import FormatError
from .corpus import CorpusError
from .dense import DenseIndexError
from .evalbench import EvalError
from .manifest import write_manifest
from .pq import train_opq, train_pq
from .pruner import PruneError
from .refine import RefineError
from .sparse import BM25Params, SparseIndexError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_DATA_ERRORS = (
    CorpusError,
    PruneError,
    SparseIndexError,
    DenseIndexError,
    RefineError,
    EvalError,
    FormatError,
    FileNotFoundError,
)


class UsageError(Exception):
    pass


def _apply_thread_cap() -> None:
    cap = os.environ.get("FLASHDEX_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise UsageError(f"FLASHDEX_THREADS must be an integer, got {cap!r}")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# Stage implementations (shared by subcommands and `run --config`)
# ---------------------------------------------------------------------------

def stage_ingest(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    corpus = corpus_mod.ingest(args.input)
    corpus_mod.save(corpus, args.out)
    write_manifest(
        args.out,
        "ingest",
        {"input": str(args.input)},
        [args.input],
        time.perf_counter() - t0,
    )
    print(f"ingested {corpus.stats.n_docs} docs, {corpus.stats.n_sentences} sentences -> {args.out}")


def stage_prune(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    corpus = corpus_mod.load(args.corpus)
    scores = pruner_mod.load_score_table(args.scores) if args.scores else None
    pruned = pruner_mod.prune(
        corpus,
        args.method,
        threshold=args.threshold,
        scores=scores,
        heuristic_fallback=not args.no_heuristic_fallback,
    )
    corpus_mod.save(pruned, args.out)
    rep = pruner_mod.report(corpus, pruned, args.method)
    if args.report:
        Path(args.report).write_text(rep.to_json(), encoding="utf-8")
    inputs = [args.corpus] + ([args.scores] if args.scores else [])
    write_manifest(
        args.out,
        "prune",
        {"method": args.method, "threshold": args.threshold},
        inputs,
        time.perf_counter() - t0,
    )
    print(
        f"pruned [{args.method}]: sentences {rep.before.n_sentences} -> {rep.after.n_sentences} "
        f"({rep.sentence_reduction_pct:.1f}% fewer), bytes {rep.before.text_bytes} -> "
        f"{rep.after.text_bytes} ({rep.size_reduction_pct:.1f}% smaller)"
    )


def stage_embed(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    if args.mode != "hash":
        raise UsageError(f"unsupported embed mode {args.mode!r} (the bridge handles model mode)")
    corpus = corpus_mod.load(args.corpus)
    emb = dense_mod.hash_embed_corpus(
        corpus, dim=args.dim, seed=args.seed, granularity=args.granularity
    )
    dense_mod.save(emb, args.out)
    write_manifest(
        args.out,
        "embed",
        {
            "mode": args.mode,
            "dim": args.dim,
            "seed": args.seed,
            "granularity": args.granularity,
        },
        [args.corpus],
        time.perf_counter() - t0,
    )
    print(f"embedded {emb.n} units at d={emb.d} -> {args.out}")


def stage_index_sparse(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    corpus = corpus_mod.load(args.corpus)
    index = sparse_mod.build(corpus, granularity=args.granularity)
    sparse_mod.save(index, args.out)
    write_manifest(
        args.out,
        "index-sparse",
        {"granularity": args.granularity},
        [args.corpus],
        time.perf_counter() - t0,
    )
    print(f"sparse index: {index.n_docs} units, {len(index.vocabulary)} terms -> {args.out}")


def stage_index_dense(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    emb = dense_mod.load(args.embeddings)
    dense_mod.save(emb, args.out)
    write_manifest(
        args.out,
        "index-dense",
        {},
        [args.embeddings],
        time.perf_counter() - t0,
    )
    print(f"flat index: {emb.n} vectors at d={emb.d} -> {args.out}")


def stage_compress(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    emb = dense_mod.load(args.embeddings)
    train = emb
    if args.train_sample and args.train_sample < emb.n:
        rng = np.random.default_rng(args.seed)
        rows = np.sort(rng.choice(emb.n, size=args.train_sample, replace=False))
        train = dense_mod.EmbeddingMatrix(
            data=emb.data[rows], ids=[emb.ids[i] for i in rows]
        )
    if args.opq:
        rotation, codebook = train_opq(
            train,
            args.m,
            args.k,
            outer_iters=args.opq_iters,
            iters=args.iters,
            seed=args.seed,
        )
    else:
        rotation = None
        codebook = train_pq(train, args.m, args.k, iters=args.iters, seed=args.seed)
    index = compressed_mod.build_compressed(emb, codebook, rotation)
    compressed_mod.save(index, args.out)
    stats = compressed_mod.compression_stats(index)
    write_manifest(
        args.out,
        "compress",
        {
            "m": args.m,
            "k": args.k,
            "opq": bool(args.opq),
            "iters": args.iters,
            "opq_iters": args.opq_iters,
            "seed": args.seed,
            "train_sample": args.train_sample,
        },
        [args.embeddings],
        time.perf_counter() - t0,
    )
    print(f"compressed: {stats.summary()} -> {args.out}")


def stage_refine(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    index = compressed_mod.load(args.index)
    query_emb = dense_mod.load(args.query_emb)
    pairs = refine_mod.load_pairs(args.pairs)
    result = refine_mod.refine_centroids(
        index,
        query_emb,
        pairs,
        epochs=args.epochs,
        lr=args.lr,
        n_hard_negatives=args.hard_negatives,
    )
    compressed_mod.save(result.index, args.out)
    write_manifest(
        args.out,
        "refine",
        {
            "epochs": args.epochs,
            "lr": args.lr,
            "hard_negatives": args.hard_negatives,
        },
        [args.index, args.query_emb, args.pairs],
        time.perf_counter() - t0,
    )
    losses = ", ".join(f"{v:.4f}" for v in result.epoch_mean_loss)
    print(f"refined over {args.epochs} epochs (mean loss per epoch: {losses}) -> {args.out}")


def _read_queries_tsv(path: str | Path) -> list[tuple[str, str]]:
    queries = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise EvalError(f"query file line {lineno}: expected `qid<TAB>text`")
            queries.append((parts[0], parts[1]))
    return queries


def _detect_index_kind(path: str | Path) -> str:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
    kinds = {b"FDXS": "sparse", b"FDXE": "flat", b"FDXQ": "compressed"}
    if magic not in kinds:
        raise FormatError(f"unrecognized index magic {magic!r} in {path}")
    return kinds[magic]


def _query_vector_source(args, queries, dim):
    """Query vectors for dense search: from a query embedding file when given,
    otherwise hash-embedded from the query text at the index dimension."""
    if args.query_emb:
        qemb = dense_mod.load(args.query_emb)
        row_of = {uid: i for i, uid in enumerate(qemb.ids)}
        missing = [qid for qid, _ in queries if qid not in row_of]
        if missing:
            raise EvalError(f"query ids missing from {args.query_emb}: {missing[:5]}")
        return lambda qid, text: qemb.data[row_of[qid]]
    return lambda qid, text: dense_mod.hash_embed_text(text, dim, args.seed)


def _build_search_fn(args, index_path, queries):
    kind = _detect_index_kind(index_path)
    if kind == "sparse":
        index = sparse_mod.load(index_path)
        params = BM25Params(k1=args.k1, b=args.b)
        return kind, lambda qid, text: sparse_mod.search(index, params, text, args.k)
    if kind == "flat":
        emb = dense_mod.load(index_path)
        vec = _query_vector_source(args, queries, emb.d)
        return kind, lambda qid, text: dense_mod.flat_search(emb, vec(qid, text), args.k)
    index = compressed_mod.load(index_path)
    vec = _query_vector_source(args, queries, index.original_d)
    return kind, lambda qid, text: compressed_mod.adc_search(index, vec(qid, text), args.k)


def stage_search(args: argparse.Namespace) -> None:
    t0 = time.perf_counter()
    queries = _read_queries_tsv(args.queries)
    kind, search_one = _build_search_fn(args, args.index, queries)
    run: evalbench.RunFile = {}
    for qid, text in queries:
        results = search_one(qid, text)
        run[qid] = [(r.doc_id, r.score) for r in results]
    evalbench.write_run(run, args.out)
    inputs = [args.index, args.queries] + ([args.query_emb] if args.query_emb else [])
    write_manifest(
        args.out,
        "search",
        {"k": args.k, "index_kind": kind, "k1": args.k1, "b": args.b, "seed": args.seed},
        inputs,
        time.perf_counter() - t0,
    )
    print(f"searched {len(queries)} queries against {kind} index -> {args.out}")


def stage_eval(args: argparse.Namespace) -> None:
    run = evalbench.read_run(args.run)
    qrels = evalbench.read_qrels(args.qrels)
    values = {}
    for metric in args.metrics.split(","):
        metric = metric.strip().lower()
        name, _, k_str = metric.partition("@")
        k = int(k_str) if k_str else 10
        if name == "recall":
            values[metric] = evalbench.recall_at_k(run, qrels, k)
        elif name == "ndcg":
            values[metric] = evalbench.ndcg_at_k(run, qrels, k)
        else:
            raise UsageError(f"unknown metric {metric!r} (expected recall@k or ndcg@k)")
    text = json.dumps(values, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)


def stage_bench(args: argparse.Namespace) -> None:
    queries = _read_queries_tsv(args.queries)
    kind, search_fn = _build_search_fn(args, args.index, queries)
    report = evalbench.bench(
        lambda q: search_fn(q[0], q[1]),
        queries,
        warmup=args.warmup,
        repeats=args.repeats,
        label=f"{kind}:{args.index}",
    )
    if args.baseline:
        baseline = evalbench.LatencyReport.from_json(
            Path(args.baseline).read_text(encoding="utf-8")
        )
        ratio = evalbench.speedup(report, baseline)
        report.speedup_vs = (baseline.label, ratio)
        print(f"speedup vs {baseline.label}: {ratio:.2f}x")
    if kind == "compressed":
        index = compressed_mod.load(args.index)
        stats = compressed_mod.compression_stats(index)
        print(
            f"formula speedup estimate (D + log2 n)/(M + log2 n) = "
            f"{stats.estimated_speedup:.2f}x"
        )
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(
        f"bench [{report.label}] median {report.median_ms:.3f} ms | "
        f"mean {report.mean_ms:.3f} ms | p95 {report.p95_ms:.3f} ms "
        f"({len(queries)} queries x {args.repeats} repeats)"
    )


def stage_stats(args: argparse.Namespace) -> None:
    if args.corpus:
        corpus = corpus_mod.load(args.corpus)
        print(json.dumps(vars(corpus.stats), indent=2))
    if args.index:
        kind = _detect_index_kind(args.index)
        if kind == "sparse":
            index = sparse_mod.load(args.index)
            print(
                json.dumps(
                    {
                        "kind": kind,
                        "n_docs": index.n_docs,
                        "n_terms": len(index.vocabulary),
                        "avgdl": index.avgdl,
                    },
                    indent=2,
                )
            )
        elif kind == "flat":
            emb = dense_mod.load(args.index)
            print(json.dumps({"kind": kind, "n": emb.n, "d": emb.d}, indent=2))
        else:
            index = compressed_mod.load(args.index)
            stats = compressed_mod.compression_stats(index)
            print(json.dumps({"kind": kind, **vars(stats)}, indent=2))
    if not args.corpus and not args.index:
        raise UsageError("stats needs --corpus and/or --index")


def stage_run(args: argparse.Namespace) -> None:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    stages = config.get("stages")
    if not isinstance(stages, list):
        raise UsageError("config must contain a `stages` list")
    parser = build_parser()
    for i, entry in enumerate(stages):
        if "stage" not in entry:
            raise UsageError(f"config stage {i} is missing the `stage` key")
        argv = [str(part) for part in entry["stage"].split()]
        for key, value in entry.items():
            if key == "stage":
                continue
            flag = "--" + key.replace("_", "-")
            if isinstance(value, bool):
                if value:
                    argv.append(flag)
            else:
                argv.extend([flag, str(value)])
        print(f"[stage {i + 1}/{len(stages)}] flashdex {' '.join(argv)}")
        stage_args = parser.parse_args(argv)
        try:
            stage_args.handler(stage_args)
        except Exception as exc:
            print(f"pipeline aborted at stage {entry['stage']!r}", file=sys.stderr)
            raise


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flashdex",
        description="Evidence retrieval: prune, index, compress, search, measure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a JSONL dump into a corpus store")
    p.add_argument("--input", required=True, help="JSONL dump, one document per line")
    p.add_argument("--out", required=True, help="corpus store output path (FDXC)")
    p.set_defaults(handler=stage_ingest)

    p = sub.add_parser("prune", help="produce an FE/CE/Fu pruned corpus")
    p.add_argument("--corpus", required=True, help="input corpus store")
    p.add_argument("--method", required=True, choices=["fe", "ce", "fu"])
    p.add_argument("--scores", help="TSV claim-score file (doc_id, sent_idx, score)")
    p.add_argument("--threshold", type=float, default=pruner_mod.DEFAULT_THRESHOLD)
    p.add_argument(
        "--no-heuristic-fallback",
        action="store_true",
        help="error on sentences missing from --scores instead of scoring heuristically",
    )
    p.add_argument("--out", required=True, help="pruned corpus store output path")
    p.add_argument("--report", help="write the reduction report JSON here")
    p.set_defaults(handler=stage_prune)

    p = sub.add_parser("embed", help="hash-embed corpus units into an FDXE file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", default="hash", choices=["hash"])
    p.add_argument("--dim", type=int, default=dense_mod.DEFAULT_HASH_DIM)
    p.add_argument("--seed", type=int, default=dense_mod.DEFAULT_HASH_SEED)
    p.add_argument("--granularity", default="sent", choices=["doc", "document", "sent", "sentence"])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=stage_embed)

    p = sub.add_parser("index", help="build a sparse or dense (flat) index")
    index_sub = p.add_subparsers(dest="index_kind", required=True)
    ps = index_sub.add_parser("sparse", help="BM25 inverted index (FDXS)")
    ps.add_argument("--corpus", required=True)
    ps.add_argument("--granularity", default="sent", choices=["doc", "document", "sent", "sentence"])
    ps.add_argument("--out", required=True)
    ps.set_defaults(handler=stage_index_sparse)
    pd = index_sub.add_parser("dense", help="flat exact-search index (FDXE)")
    pd.add_argument("--embeddings", required=True)
    pd.add_argument("--out", required=True)
    pd.set_defaults(handler=stage_index_dense)

    p = sub.add_parser("compress", help="train PQ/OPQ codebooks and encode (FDXQ)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("-M", "--m", dest="m", type=int, default=96, help="number of codebooks")
    p.add_argument("-K", "--k", dest="k", type=int, default=256, help="centroids per codebook")
    p.add_argument("--opq", action="store_true", help="learn an orthonormal rotation as well")
    p.add_argument("--iters", type=int, default=25, help="k-means iterations per subspace")
    p.add_argument("--opq-iters", type=int, default=10, help="outer alternations for --opq")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument(
        "--train-sample",
        type=int,
        default=25600,
        help="train codebooks on this many seeded-sampled rows (0 = all rows)",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(handler=stage_compress)

    p = sub.add_parser("refine", help="ranking-supervised centroid refinement")
    p.add_argument("--index", required=True, help="compressed index (FDXQ)")
    p.add_argument("--query-emb", required=True, help="query embeddings (FDXE)")
    p.add_argument("--pairs", required=True, help="TSV: query_row, positive_id[, negs]")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--hard-negatives", type=int, default=refine_mod.DEFAULT_HARD_NEGATIVES)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=stage_refine)

    p = sub.add_parser("search", help="run queries against any index, write a TREC run")
    p.add_argument("--index", required=True, help="FDXS, FDXE, or FDXQ file")
    p.add_argument("--queries", required=True, help="TSV: qid <TAB> query text")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--k1", type=float, default=1.2, help="BM25 k1 (sparse indexes)")
    p.add_argument("--b", type=float, default=0.75, help="BM25 b (sparse indexes)")
    p.add_argument("--seed", type=int, default=dense_mod.DEFAULT_HASH_SEED,
                   help="hash-embedder seed for dense query embedding")
    p.add_argument("--query-emb", help="FDXE of precomputed query vectors keyed by qid")
    p.add_argument("--out", required=True, help="TREC run output")
    p.set_defaults(handler=stage_search)

    p = sub.add_parser("eval", help="score a TREC run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="recall@10,ndcg@10")
    p.add_argument("--out", help="write the metric JSON here")
    p.set_defaults(handler=stage_eval)

    p = sub.add_parser("bench", help="latency harness over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=dense_mod.DEFAULT_HASH_SEED)
    p.add_argument("--query-emb")
    p.add_argument("--baseline", help="LatencyReport JSON to compute speedup against")
    p.add_argument("--out", help="write this run's LatencyReport JSON here")
    p.set_defaults(handler=stage_bench)

    p = sub.add_parser("stats", help="print corpus or index statistics")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.set_defaults(handler=stage_stats)

    p = sub.add_parser("run", help="execute a multi-stage pipeline config")
    p.add_argument("--config", required=True, help="JSON pipeline config")
    p.set_defaults(handler=stage_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - invariant violations surface as exit 4
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
