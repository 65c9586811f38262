"""End-to-end CLI runs on a small synthetic dump: every subcommand, manifest
sidecars, rerun determinism, exit codes, and help coverage."""

import json
import re
from pathlib import Path

import pytest

from flashdex.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, build_parser, main

DUMP = [
    {"id": "d1", "title": "Alpha", "text": "Paris hosted 3 games in 1900. It rained."},
    {"id": "d2", "title": "Beta", "sentences": ["Berlin grew fast.[1]", "No claim here."]},
    {"id": "d3", "title": "Gamma", "text": "Oslo opened a museum in March 1990. Nice."},
    {"id": "d4", "title": "Delta", "sentences": ["The harbor shipped 2100 tons.[2]"]},
]


@pytest.fixture
def dump(tmp_path):
    path = tmp_path / "dump.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for record in DUMP:
            fh.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def store(dump, tmp_path):
    out = tmp_path / "c.store"
    assert main(["ingest", "--input", str(dump), "--out", str(out)]) == EXIT_OK
    return out


class TestStages:
    def test_ingest_writes_store_and_manifest(self, store):
        assert store.exists()
        manifest = json.loads(Path(str(store) + ".manifest.json").read_text())
        assert manifest["stage"] == "ingest"
        assert manifest["artifact_sha256"]
        assert len(manifest["inputs"]) == 1

    def test_prune_with_report(self, store, tmp_path):
        out = tmp_path / "ce.store"
        report = tmp_path / "report.json"
        code = main([
            "prune", "--corpus", str(store), "--method", "ce",
            "--out", str(out), "--report", str(report),
        ])
        assert code == EXIT_OK
        payload = json.loads(report.read_text())
        assert payload["method"] == "ce"
        assert payload["after"]["n_sentences"] == 2  # two cited sentences in DUMP

    def test_embed_and_dense_index(self, store, tmp_path):
        emb = tmp_path / "emb.bin"
        idx = tmp_path / "flat.idx"
        assert main(["embed", "--corpus", str(store), "--dim", "32", "--out", str(emb)]) == EXIT_OK
        assert main(["index", "dense", "--embeddings", str(emb), "--out", str(idx)]) == EXIT_OK
        assert idx.read_bytes()[:4] == b"FDXE"

    def test_sparse_search_eval_pipeline(self, store, tmp_path):
        idx = tmp_path / "s.idx"
        queries = tmp_path / "q.tsv"
        run = tmp_path / "run.trec"
        qrels = tmp_path / "qrels.txt"
        queries.write_text("q1\tparis games\nq2\tharbor tons\n", encoding="utf-8")
        qrels.write_text("q1 0 d1#0 1\nq2 0 d4#0 1\n", encoding="utf-8")
        assert main(["index", "sparse", "--corpus", str(store), "--out", str(idx)]) == EXIT_OK
        assert main([
            "search", "--index", str(idx), "--queries", str(queries),
            "-k", "5", "--out", str(run),
        ]) == EXIT_OK
        out = tmp_path / "metrics.json"
        assert main([
            "eval", "--run", str(run), "--qrels", str(qrels),
            "--metrics", "recall@5,ndcg@5", "--out", str(out),
        ]) == EXIT_OK
        metrics = json.loads(out.read_text())
        assert metrics["recall@5"] == pytest.approx(1.0)
        assert metrics["ndcg@5"] == pytest.approx(1.0)

    def test_compress_refine_and_dense_search(self, store, tmp_path):
        emb = tmp_path / "emb.bin"
        pq = tmp_path / "pq.idx"
        refined = tmp_path / "refined.idx"
        queries = tmp_path / "q.tsv"
        qemb = tmp_path / "qemb.bin"
        pairs = tmp_path / "pairs.tsv"
        run = tmp_path / "run.trec"
        main(["embed", "--corpus", str(store), "--dim", "16", "--out", str(emb)])
        assert main([
            "compress", "--embeddings", str(emb), "-M", "4", "-K", "4",
            "--seed", "7", "--out", str(pq),
        ]) == EXIT_OK
        assert pq.read_bytes()[:4] == b"FDXQ"
        # query embeddings: reuse the corpus embedding of unit d1#0
        main(["embed", "--corpus", str(store), "--dim", "16", "--out", str(qemb)])
        pairs.write_text("0\td1#0\n", encoding="utf-8")
        assert main([
            "refine", "--index", str(pq), "--query-emb", str(qemb),
            "--pairs", str(pairs), "--epochs", "2", "--lr", "0.01",
            "--out", str(refined),
        ]) == EXIT_OK
        queries.write_text("q1\tParis hosted 3 games in 1900.\n", encoding="utf-8")
        assert main([
            "search", "--index", str(refined), "--queries", str(queries),
            "-k", "3", "--out", str(run),
        ]) == EXIT_OK
        assert run.read_text().strip()

    def test_opq_compress(self, store, tmp_path):
        emb = tmp_path / "emb.bin"
        pq = tmp_path / "opq.idx"
        main(["embed", "--corpus", str(store), "--dim", "16", "--out", str(emb)])
        assert main([
            "compress", "--embeddings", str(emb), "-M", "4", "-K", "4",
            "--opq", "--opq-iters", "2", "--seed", "7", "--out", str(pq),
        ]) == EXIT_OK

    def test_bench_with_baseline(self, store, tmp_path):
        idx = tmp_path / "s.idx"
        queries = tmp_path / "q.tsv"
        rep_a = tmp_path / "a.json"
        rep_b = tmp_path / "b.json"
        queries.write_text("q1\tparis\n", encoding="utf-8")
        main(["index", "sparse", "--corpus", str(store), "--out", str(idx)])
        assert main([
            "bench", "--index", str(idx), "--queries", str(queries),
            "--warmup", "1", "--repeats", "3", "--out", str(rep_a),
        ]) == EXIT_OK
        assert main([
            "bench", "--index", str(idx), "--queries", str(queries),
            "--warmup", "1", "--repeats", "3", "--baseline", str(rep_a),
            "--out", str(rep_b),
        ]) == EXIT_OK
        payload = json.loads(rep_b.read_text())
        assert payload["speedup_vs"]["ratio"] > 0

    def test_stats(self, store, capsys):
        assert main(["stats", "--corpus", str(store)]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["n_docs"] == 4


class TestPipelineConfig:
    def test_run_config_and_determinism(self, dump, tmp_path):
        cfg = {
            "stages": [
                {"stage": "ingest", "input": str(dump), "out": str(tmp_path / "c.store")},
                {
                    "stage": "prune", "corpus": str(tmp_path / "c.store"),
                    "method": "fu", "threshold": 0.5, "out": str(tmp_path / "fu.store"),
                },
                {
                    "stage": "embed", "corpus": str(tmp_path / "fu.store"),
                    "dim": 16, "seed": 7, "out": str(tmp_path / "emb.bin"),
                },
                {
                    "stage": "index sparse", "corpus": str(tmp_path / "fu.store"),
                    "out": str(tmp_path / "s.idx"),
                },
                {
                    "stage": "compress", "embeddings": str(tmp_path / "emb.bin"),
                    "m": 4, "k": 4, "seed": 7, "out": str(tmp_path / "pq.idx"),
                },
            ]
        }
        cfg_path = tmp_path / "pipeline.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        artifacts = ["c.store", "fu.store", "emb.bin", "s.idx", "pq.idx"]
        first = {a: (tmp_path / a).read_bytes() for a in artifacts}
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        for a in artifacts:
            assert (tmp_path / a).read_bytes() == first[a], f"{a} changed between runs"

    def test_failing_stage_reports_name(self, tmp_path, capsys):
        cfg = {"stages": [{"stage": "prune", "corpus": str(tmp_path / "missing.store"),
                           "method": "ce", "out": str(tmp_path / "x.store")}]}
        cfg_path = tmp_path / "p.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == EXIT_DATA
        assert "prune" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_corpus_is_data_error(self, tmp_path, capsys):
        code = main(["prune", "--corpus", str(tmp_path / "nope.store"),
                     "--method", "ce", "--out", str(tmp_path / "o.store")])
        assert code == EXIT_DATA
        assert "nope.store" in capsys.readouterr().err

    def test_malformed_dump_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n", encoding="utf-8")
        assert main(["ingest", "--input", str(bad), "--out", str(tmp_path / "c.store")]) == EXIT_DATA

    def test_usage_error_from_argparse(self):
        with pytest.raises(SystemExit) as exc:
            main(["prune", "--method", "bogus"])
        assert exc.value.code == EXIT_USAGE

    def test_stats_without_args_is_usage(self):
        assert main(["stats"]) == EXIT_USAGE


class TestHelpCoverage:
    def test_every_subcommand_help_lists_flags(self, capsys):
        parser = build_parser()
        commands = {
            "ingest": ["--input", "--out"],
            "prune": ["--corpus", "--method", "--scores", "--threshold", "--out", "--report"],
            "embed": ["--corpus", "--mode", "--dim", "--seed", "--granularity", "--out"],
            "compress": ["--embeddings", "-M", "-K", "--opq", "--seed", "--out"],
            "refine": ["--index", "--query-emb", "--pairs", "--epochs", "--lr", "--out"],
            "search": ["--index", "--queries", "-k", "--out", "--query-emb"],
            "eval": ["--run", "--qrels", "--metrics"],
            "bench": ["--index", "--queries", "--warmup", "--repeats", "--baseline"],
            "stats": ["--corpus", "--index"],
            "run": ["--config"],
        }
        for command, flags in commands.items():
            with pytest.raises(SystemExit):
                parser.parse_args([command, "--help"])
            text = capsys.readouterr().out
            for flag in flags:
                assert re.search(re.escape(flag), text), f"{command} help lacks {flag}"

    def test_index_subcommands_help(self, capsys):
        parser = build_parser()
        for sub, flags in {"sparse": ["--corpus", "--granularity", "--out"],
                           "dense": ["--embeddings", "--out"]}.items():
            with pytest.raises(SystemExit):
                parser.parse_args(["index", sub, "--help"])
            text = capsys.readouterr().out
            for flag in flags:
                assert flag in text
