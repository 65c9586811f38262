"""flashdex: evidence-retrieval engine with corpus pruning, BM25 and
PQ-compressed dense indexing, and a retrieval benchmarking harness."""

__version__ = "0.1.0"
