"""Dense vector store: the FDXE embedding file, a deterministic hash
embedder for hermetic tests, and exact flat inner-product search.

FDXE layout (all little-endian):
    "FDXE" | u32 version | u64 n | u32 d | u8 dtype (0 = f32)
    | u8 flags (bit 0: rows are L2-normalized)
    | n*d f32 row-major values | n x (u32 length, utf-8 id bytes)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binio
from ._binio import FormatError
from .corpus import Corpus
from .sparse import SearchResult, tokenize

EMBED_MAGIC = b"FDXE"
EMBED_VERSION = 1
DTYPE_F32 = 0
FLAG_L2_NORMALIZED = 1

DEFAULT_HASH_DIM = 384
DEFAULT_HASH_SEED = 7


class DenseIndexError(Exception):
    pass


@dataclass
class EmbeddingMatrix:
    data: np.ndarray          # (n, d) float32
    ids: list[str]
    l2_normalized: bool = False

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DenseIndexError(f"expected a 2-d matrix, got shape {self.data.shape}")
        if self.data.shape[0] != len(self.ids):
            raise DenseIndexError(
                f"{self.data.shape[0]} rows but {len(self.ids)} ids"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DenseIndexError("ids must be unique")
        if self.data.size and not np.isfinite(self.data).all():
            raise DenseIndexError("embedding values must be finite")
        self._ids_array: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def ids_array(self) -> np.ndarray:
        if self._ids_array is None:
            self._ids_array = np.array(self.ids)
        return self._ids_array


def corpus_units(corpus: Corpus, granularity: str = "sentence") -> list[tuple[str, str]]:
    """(unit_id, text) pairs in index order, matching sparse.build ids."""
    units: list[tuple[str, str]] = []
    if granularity in ("document", "doc"):
        for doc in corpus.documents:
            units.append((doc.doc_id, " ".join(s.text for s in doc.sentences)))
    elif granularity in ("sentence", "sent"):
        for doc in corpus.documents:
            for sent in doc.sentences:
                units.append((f"{doc.doc_id}#{sent.sent_idx}", sent.text))
    else:
        raise DenseIndexError(f"unknown granularity {granularity!r}")
    return units


def hash_embed_text(text: str, dim: int, seed: int) -> np.ndarray:
    """Feature-hash tokens into `dim` buckets with +-1 signs, L2-normalized.

    Bucket and sign come from the first 8 bytes of blake2b keyed with the
    little-endian seed: bit 0 is the sign, the remaining bits pick the bucket.
    Accumulation and normalization happen in float64 before the final float32
    cast, so any implementation following this recipe is bit-compatible.
    """
    if dim < 1:
        raise DenseIndexError(f"dim must be >= 1, got {dim}")
    key = struct.pack("<q", seed)
    acc = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
        value = struct.unpack("<Q", digest)[0]
        sign = 1.0 if value & 1 else -1.0
        acc[(value >> 1) % dim] += sign
    norm = float(np.sqrt(np.dot(acc, acc)))
    if norm > 0.0:
        acc /= norm
    return acc.astype(np.float32)


def hash_embed_corpus(
    corpus: Corpus,
    dim: int = DEFAULT_HASH_DIM,
    seed: int = DEFAULT_HASH_SEED,
    granularity: str = "sentence",
) -> EmbeddingMatrix:
    units = corpus_units(corpus, granularity)
    data = np.zeros((len(units), dim), dtype=np.float32)
    for row, (_, text) in enumerate(units):
        data[row] = hash_embed_text(text, dim, seed)
    return EmbeddingMatrix(data=data, ids=[uid for uid, _ in units], l2_normalized=True)


def flat_search(emb: EmbeddingMatrix, query: np.ndarray, k: int) -> list[SearchResult]:
    """Exact top-k by inner product, ties broken by id ascending."""
    if k < 1:
        raise DenseIndexError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (emb.d,):
        raise DenseIndexError(
            f"query dimension {query.shape} does not match index dimension ({emb.d},)"
        )
    scores = emb.data @ query
    return top_k_with_ties(scores, emb.ids, k, ids_array=emb.ids_array())


def top_k_with_ties(
    scores: np.ndarray,
    ids: list[str],
    k: int,
    ids_array: np.ndarray | None = None,
) -> list[SearchResult]:
    """Select k best by (score desc, id asc), exact under score ties.

    Every unit tied with the k-th score joins the candidate set, which is then
    ordered by (score desc, id asc); passing a prebuilt string array keeps the
    tie-break vectorized when candidate sets are large.
    """
    n = scores.shape[0]
    if n == 0:
        return []
    if k >= n:
        candidates = np.arange(n)
    else:
        part = np.argpartition(-scores, k - 1)[:k]
        threshold = scores[part].min()
        candidates = np.flatnonzero(scores >= threshold)
    if ids_array is None:
        order = sorted(candidates.tolist(), key=lambda i: (-scores[i], ids[i]))[:k]
    else:
        ranked = np.lexsort((ids_array[candidates], -scores[candidates]))
        order = candidates[ranked[:k]].tolist()
    return [SearchResult(doc_id=ids[i], score=float(scores[i])) for i in order]


def save(emb: EmbeddingMatrix, path: str | Path) -> None:
    with Path(path).open("wb") as fh:
        _binio.write_magic(fh, EMBED_MAGIC, EMBED_VERSION)
        _binio.write_u64(fh, emb.n)
        _binio.write_u32(fh, emb.d)
        _binio.write_u8(fh, DTYPE_F32)
        _binio.write_u8(fh, FLAG_L2_NORMALIZED if emb.l2_normalized else 0)
        fh.write(emb.data.astype("<f4", copy=False).tobytes(order="C"))
        for unit_id in emb.ids:
            _binio.write_str(fh, unit_id)


def load(path: str | Path) -> EmbeddingMatrix:
    with Path(path).open("rb") as fh:
        _binio.check_magic(fh, EMBED_MAGIC, EMBED_VERSION)
        n = _binio.read_u64(fh)
        d = _binio.read_u32(fh)
        dtype = _binio.read_u8(fh)
        if dtype != DTYPE_F32:
            raise FormatError(f"unsupported dtype tag {dtype}")
        flags = _binio.read_u8(fh)
        raw = _binio.read_exact(fh, n * d * 4)
        data = np.frombuffer(raw, dtype="<f4").reshape(n, d).copy()
        ids = [_binio.read_str(fh) for _ in range(n)]
    return EmbeddingMatrix(
        data=data, ids=ids, l2_normalized=bool(flags & FLAG_L2_NORMALIZED)
    )
