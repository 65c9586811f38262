"""Metrics against hand-computed cases and the latency harness contracts."""

import math
import time

import pytest

from flashdex.evalbench import (
    EvalError,
    LatencyReport,
    bench,
    ndcg_at_k,
    read_qrels,
    read_run,
    recall_at_k,
    speedup,
    weighted_f1,
    write_run,
)


def _run(mapping):
    return {
        qid: sorted(items, key=lambda it: (-it[1], it[0]))
        for qid, items in mapping.items()
    }


class TestRecall:
    def test_all_relevant_in_topk(self):
        run = _run({"q1": [("a", 3.0), ("b", 2.0)]})
        qrels = {"q1": {"a", "b"}}
        assert recall_at_k(run, qrels, 10) == pytest.approx(1.0)

    def test_none_retrieved(self):
        run = _run({"q1": [("x", 1.0)]})
        qrels = {"q1": {"a"}}
        assert recall_at_k(run, qrels, 10) == pytest.approx(0.0)

    def test_half(self):
        run = _run({"q1": [("a", 1.0)] + [(f"x{i}", -float(i)) for i in range(9)]})
        qrels = {"q1": {"a", "b"}}
        assert recall_at_k(run, qrels, 10) == pytest.approx(0.5)

    def test_monotone_in_k(self):
        run = _run({"q1": [(c, -i) for i, c in enumerate("abcdefgh")]})
        qrels = {"q1": {"c", "f", "h"}}
        values = [recall_at_k(run, qrels, k) for k in range(1, 9)]
        assert values == sorted(values)
        assert values[-1] == pytest.approx(1.0)

    def test_empty_relevant_excluded_with_warning(self, caplog):
        run = _run({"q1": [("a", 1.0)], "q2": [("a", 1.0)]})
        qrels = {"q1": {"a"}, "q2": set()}
        with caplog.at_level("WARNING"):
            value = recall_at_k(run, qrels, 10)
        assert value == pytest.approx(1.0)
        assert "excluded" in caplog.text

    def test_missing_qid_is_error(self):
        with pytest.raises(EvalError, match="missing"):
            recall_at_k(_run({"q9": [("a", 1.0)]}), {"q1": {"a"}}, 10)


class TestNdcg:
    def test_perfect_ranking(self):
        run = _run({"q1": [("a", 2.0), ("b", 1.0)]})
        qrels = {"q1": {"a", "b"}}
        assert ndcg_at_k(run, qrels, 10) == pytest.approx(1.0)

    def test_single_relevant_at_rank_two(self):
        run = _run({"q1": [("x", 2.0), ("a", 1.0)]})
        qrels = {"q1": {"a"}}
        assert ndcg_at_k(run, qrels, 10) == pytest.approx(1.0 / math.log2(3), abs=1e-4)
        assert ndcg_at_k(run, qrels, 10) == pytest.approx(0.6309, abs=1e-4)

    def test_relevant_below_k(self):
        run = _run({"q1": [(f"x{i}", -float(i)) for i in range(10)] + [("a", -99.0)]})
        qrels = {"q1": {"a"}}
        assert ndcg_at_k(run, qrels, 10) == pytest.approx(0.0)

    def test_bounded_by_one(self):
        run = _run({"q1": [("a", 5.0), ("x", 4.0), ("b", 3.0)]})
        qrels = {"q1": {"a", "b"}}
        value = ndcg_at_k(run, qrels, 10)
        assert 0.0 < value < 1.0


class TestWeightedF1:
    def test_perfect(self):
        gold = {"1": "sup", "2": "ref", "3": "sup"}
        assert weighted_f1(dict(gold), gold) == pytest.approx(1.0)

    def test_all_one_class_balanced_binary(self):
        gold = {str(i): ("a" if i < 5 else "b") for i in range(10)}
        preds = {str(i): "a" for i in range(10)}
        # class a: P=0.5, R=1 -> F1=2/3; class b: F1=0; weighted = 1/3
        assert weighted_f1(preds, gold) == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_empty_errors(self):
        with pytest.raises(EvalError):
            weighted_f1({}, {})

    def test_key_mismatch_errors(self):
        with pytest.raises(EvalError):
            weighted_f1({"1": "a"}, {"2": "a"})

    def test_permutation_invariant(self):
        gold = {"1": "a", "2": "b", "3": "a", "4": "b"}
        preds = {"1": "a", "2": "a", "3": "b", "4": "b"}
        reordered_gold = dict(reversed(list(gold.items())))
        reordered_preds = dict(reversed(list(preds.items())))
        assert weighted_f1(preds, gold) == pytest.approx(
            weighted_f1(reordered_preds, reordered_gold)
        )


class TestTrecIo:
    def test_qrels_round(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 dA 1\nq1 0 dB 0\nq2 0 dC 2\n", encoding="utf-8")
        qrels = read_qrels(path)
        assert qrels == {"q1": {"dA"}, "q2": {"dC"}}

    def test_run_round_trip(self, tmp_path):
        run = _run({"q1": [("dA", 2.5), ("dB", 1.25)], "q2": [("dC", 0.5)]})
        path = tmp_path / "run.trec"
        write_run(run, path)
        loaded = read_run(path)
        assert loaded == run
        first = path.read_text().splitlines()[0].split()
        assert first[1] == "Q0" and first[3] == "1"

    def test_duplicate_doc_rejected(self, tmp_path):
        path = tmp_path / "run.trec"
        path.write_text("q1 Q0 dA 1 2.0 t\nq1 Q0 dA 2 1.0 t\n", encoding="utf-8")
        with pytest.raises(EvalError, match="duplicate"):
            read_run(path)


class TestBench:
    def test_single_sample(self):
        report = bench(lambda q: q * 2, ["query"], warmup=0, repeats=1)
        assert report.repeats == 1
        assert len(report.samples_ms) == 1
        assert len(report.samples_ms[0]) == 1
        assert report.median_ms >= 0.0

    def test_checksum_stable_across_repeats(self):
        report = bench(lambda q: sorted(q), [[3, 1, 2], [9, 8]], warmup=1, repeats=5)
        assert len(report.checksums) == 2
        assert all(report.checksums)

    def test_nondeterministic_search_fn_rejected(self):
        state = {"n": 0}

        def flaky(q):
            state["n"] += 1
            return state["n"]

        with pytest.raises(EvalError, match="nondeterministic"):
            bench(flaky, ["q"], warmup=0, repeats=3)

    def test_self_comparison_speedup_band(self):
        def work(q):
            t0 = time.perf_counter()
            while time.perf_counter() - t0 < 0.002:
                pass
            return q

        a = bench(work, ["q1", "q2"], warmup=1, repeats=8, label="a")
        b = bench(work, ["q1", "q2"], warmup=1, repeats=8, label="b")
        assert 0.5 <= speedup(a, b) <= 2.0

    def test_identical_reports_speedup_one(self):
        report = bench(lambda q: q, ["q"], warmup=0, repeats=3)
        assert speedup(report, report) == pytest.approx(1.0)

    def test_two_to_one_speedup_shape(self):
        slow = LatencyReport(
            label="full", warmup=0, repeats=1, samples_ms=[[659.0]],
            checksums=["x"], mean_ms=659.0, median_ms=659.0, p95_ms=659.0,
        )
        fast = LatencyReport(
            label="ce", warmup=0, repeats=1, samples_ms=[[327.0]],
            checksums=["x"], mean_ms=327.0, median_ms=327.0, p95_ms=327.0,
        )
        ratio = speedup(fast, slow)
        assert ratio == pytest.approx(659.0 / 327.0)
        assert f"{ratio:.1f}x" == "2.0x"

    def test_slower_candidate_below_one(self):
        fast = LatencyReport(
            label="a", warmup=0, repeats=1, samples_ms=[[1.0]],
            checksums=["x"], mean_ms=1.0, median_ms=1.0, p95_ms=1.0,
        )
        slow = LatencyReport(
            label="b", warmup=0, repeats=1, samples_ms=[[2.0]],
            checksums=["x"], mean_ms=2.0, median_ms=2.0, p95_ms=2.0,
        )
        assert speedup(slow, fast) < 1.0

    def test_report_json_round_trip(self):
        report = bench(lambda q: q, ["q1", "q2"], warmup=0, repeats=2, label="t")
        loaded = LatencyReport.from_json(report.to_json())
        assert loaded == report

    def test_validation(self):
        with pytest.raises(EvalError):
            bench(lambda q: q, ["q"], warmup=0, repeats=0)
        with pytest.raises(EvalError):
            bench(lambda q: q, [], warmup=0, repeats=1)
