"""Compressed dense index: PQ codes + optional rotation, searched with an
asymmetric-distance lookup table.

A query is padded and rotated once, an M x K table of subquery-centroid inner
products is precomputed, and each document scores as the sum of its M table
entries — identical (to float64 round-off) to the inner product between the
rotated query and the document's concatenated centroids.

FDXQ layout (little-endian):
    "FDXQ" | u32 version | u64 n | u32 m | u32 k | u32 dsub | u32 original_d
    | u8 has_rotation | [d_pad*d_pad f64 rotation]
    | m*k*dsub f64 centroids | n*m u8 codes | n x (u32 length, utf-8 id bytes)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binio
from .dense import DenseIndexError, EmbeddingMatrix, top_k_with_ties
from .pq import OPQRotation, PQCodebook, encode, pad_columns
from .sparse import SearchResult

COMPRESSED_MAGIC = b"FDXQ"
COMPRESSED_VERSION = 1

try:
    import numba

    @numba.njit(parallel=True, cache=True)
    def _adc_scan(codes_t, lut):  # pragma: no cover - exercised via adc_scores
        # subspace-major passes keep each 2 KB lookup row L1-resident while
        # the transposed code rows stream sequentially
        m, n = codes_t.shape
        out = np.zeros(n, dtype=np.float64)
        for j in range(m):
            row = lut[j]
            col = codes_t[j]
            for i in numba.prange(n):
                out[i] += row[col[i]]
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _adc_scan_numpy(codes_t: np.ndarray, lut: np.ndarray) -> np.ndarray:
    m, n = codes_t.shape
    out = np.zeros(n, dtype=np.float64)
    for j in range(m):
        out += lut[j, codes_t[j]]
    return out


def adc_scan(codes_t: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Sum each unit's M lookup-table entries; codes are subspace-major."""
    if _HAVE_NUMBA:
        return _adc_scan(codes_t, lut)
    return _adc_scan_numpy(codes_t, lut)


@dataclass
class CompressedIndex:
    codebook: PQCodebook
    rotation: OPQRotation | None
    codes: np.ndarray  # (n, m) uint8, entry < k
    ids: list[str]
    original_d: int

    def __post_init__(self) -> None:
        self.codes = np.ascontiguousarray(self.codes)
        if self.codes.ndim != 2 or self.codes.shape[1] != self.codebook.m:
            raise DenseIndexError(
                f"codes must be (n, {self.codebook.m}), got {self.codes.shape}"
            )
        if self.codes.shape[0] != len(self.ids):
            raise DenseIndexError(
                f"{self.codes.shape[0]} code rows but {len(self.ids)} ids"
            )
        if self.codes.size and int(self.codes.max()) >= self.codebook.k:
            raise DenseIndexError("code entry out of range")
        if self.rotation is not None and self.rotation.r.shape[0] != self.codebook.padded_d:
            raise DenseIndexError("rotation dimension does not match codebook")
        self._ids_array: np.ndarray | None = None
        self._codes_t: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    def ids_array(self) -> np.ndarray:
        if self._ids_array is None:
            self._ids_array = np.array(self.ids)
        return self._ids_array

    def codes_t(self) -> np.ndarray:
        """Subspace-major copy of the codes, built once for ADC scans."""
        if self._codes_t is None:
            self._codes_t = np.ascontiguousarray(self.codes.T)
        return self._codes_t


def build_compressed(
    emb: EmbeddingMatrix,
    codebook: PQCodebook,
    rotation: OPQRotation | None = None,
) -> CompressedIndex:
    codes = encode(emb, codebook, rotation)
    return CompressedIndex(
        codebook=codebook,
        rotation=rotation,
        codes=codes,
        ids=list(emb.ids),
        original_d=emb.d,
    )


def rotate_query(index: CompressedIndex, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.original_d,):
        raise DenseIndexError(
            f"query dimension {query.shape} does not match index ({index.original_d},)"
        )
    padded = pad_columns(query.reshape(1, -1), index.codebook.m)[0]
    if index.rotation is not None:
        padded = padded @ index.rotation.r
    return padded


def adc_table(index: CompressedIndex, query: np.ndarray) -> np.ndarray:
    """(m, k) table of subquery-centroid inner products for a raw query."""
    rotated = rotate_query(index, query)
    cb = index.codebook
    sub = rotated.reshape(cb.m, cb.dsub)
    return np.einsum("mkd,md->mk", cb.centroids, sub)


def adc_scores(index: CompressedIndex, query: np.ndarray) -> np.ndarray:
    """Approximate inner-product score of every stored vector."""
    lut = np.ascontiguousarray(adc_table(index, query))
    return adc_scan(index.codes_t(), lut)


def adc_search(index: CompressedIndex, query: np.ndarray, k: int) -> list[SearchResult]:
    """Top-k by ADC score, ties broken by unit id ascending."""
    if k < 1:
        raise DenseIndexError(f"k must be >= 1, got {k}")
    scores = adc_scores(index, query)
    return top_k_with_ties(scores, index.ids, k, ids_array=index.ids_array())


@dataclass(frozen=True)
class CompressionStats:
    n: int
    d: int
    m: int
    k: int
    raw_bytes_per_vector: int
    code_bytes_per_vector: int
    compression_ratio: float
    code_section_bytes: int
    overhead_bytes: int
    estimated_speedup: float

    def summary(self) -> str:
        return (
            f"n={self.n} d={self.d} m={self.m} k={self.k} "
            f"raw={self.raw_bytes_per_vector} B/vec "
            f"codes={self.code_bytes_per_vector} B/vec "
            f"ratio={self.compression_ratio:.2f} "
            f"estimated_speedup={self.estimated_speedup:.2f}x"
        )


def estimated_speedup(d: int, m: int, n: int) -> float:
    """(D + log2 n) / (M + log2 n): exhaustive-dot cost vs table-sum cost."""
    if n < 2:
        raise DenseIndexError(f"need n >= 2 for the speedup estimate, got {n}")
    log_n = math.log2(n)
    return (d + log_n) / (m + log_n)


def compression_stats(index: CompressedIndex, n_docs: int | None = None) -> CompressionStats:
    """Storage accounting: raw f32 vectors cost 4D bytes, codes cost M bytes
    (one byte per entry, requiring K <= 256); ratio is 4D/M."""
    cb = index.codebook
    if cb.k > 256:
        raise DenseIndexError(f"K={cb.k} exceeds one byte per code entry")
    n = index.n if n_docs is None else n_docs
    d = index.original_d
    overhead = cb.centroids.nbytes
    if index.rotation is not None:
        overhead += index.rotation.r.nbytes
    return CompressionStats(
        n=n,
        d=d,
        m=cb.m,
        k=cb.k,
        raw_bytes_per_vector=4 * d,
        code_bytes_per_vector=cb.m,
        compression_ratio=4.0 * d / cb.m,
        code_section_bytes=index.n * cb.m,
        overhead_bytes=overhead,
        estimated_speedup=estimated_speedup(d, cb.m, n),
    )


def save(index: CompressedIndex, path: str | Path) -> None:
    cb = index.codebook
    if cb.k > 256:
        raise DenseIndexError("FDXQ stores one byte per code entry; K must be <= 256")
    with Path(path).open("wb") as fh:
        _binio.write_magic(fh, COMPRESSED_MAGIC, COMPRESSED_VERSION)
        _binio.write_u64(fh, index.n)
        _binio.write_u32(fh, cb.m)
        _binio.write_u32(fh, cb.k)
        _binio.write_u32(fh, cb.dsub)
        _binio.write_u32(fh, index.original_d)
        if index.rotation is None:
            _binio.write_u8(fh, 0)
        else:
            _binio.write_u8(fh, 1)
            fh.write(index.rotation.r.astype("<f8", copy=False).tobytes(order="C"))
        fh.write(cb.centroids.astype("<f8", copy=False).tobytes(order="C"))
        fh.write(np.ascontiguousarray(index.codes, dtype=np.uint8).tobytes(order="C"))
        for unit_id in index.ids:
            _binio.write_str(fh, unit_id)


def load(path: str | Path) -> CompressedIndex:
    with Path(path).open("rb") as fh:
        _binio.check_magic(fh, COMPRESSED_MAGIC, COMPRESSED_VERSION)
        n = _binio.read_u64(fh)
        m = _binio.read_u32(fh)
        k = _binio.read_u32(fh)
        dsub = _binio.read_u32(fh)
        original_d = _binio.read_u32(fh)
        has_rotation = _binio.read_u8(fh)
        rotation = None
        d_pad = m * dsub
        if has_rotation:
            raw = _binio.read_exact(fh, d_pad * d_pad * 8)
            rotation = OPQRotation(
                r=np.frombuffer(raw, dtype="<f8").reshape(d_pad, d_pad).copy()
            )
        raw = _binio.read_exact(fh, m * k * dsub * 8)
        centroids = np.frombuffer(raw, dtype="<f8").reshape(m, k, dsub).copy()
        raw = _binio.read_exact(fh, n * m)
        codes = np.frombuffer(raw, dtype=np.uint8).reshape(n, m).copy()
        ids = [_binio.read_str(fh) for _ in range(n)]
    return CompressedIndex(
        codebook=PQCodebook(centroids=centroids),
        rotation=rotation,
        codes=codes,
        ids=ids,
        original_d=original_d,
    )
