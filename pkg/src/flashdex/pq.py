"""Product-quantization codebooks: seeded k-means training, the optimized
(rotated) variant, and encode/reconstruct.

Vectors of dimension D are split into M subvectors of dimension D/M (zero-
padded when M does not divide D); each subvector is quantized to one of K
centroids, so a vector stores as M centroid indices.  The optimized variant
alternates per-subspace k-means with an orthogonal Procrustes update of a
global rotation, which never increases the joint quantization error.

All training arithmetic is float64 so distortion traces are exactly monotone
and encode/reconstruct round-trips are stable; codebooks keep float64
centroids throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dense import DenseIndexError, EmbeddingMatrix

DEFAULT_KMEANS_ITERS = 25
DEFAULT_OPQ_OUTER_ITERS = 10

_ASSIGN_CHUNK = 4096  # rows per distance block; keeps the n*K block cache-resident

try:
    import numba

    @numba.njit(parallel=True, cache=True)
    def _assign_kernel(x, centroids):  # pragma: no cover - exercised via _assign
        n, dsub = x.shape
        k = centroids.shape[0]
        assign = np.empty(n, dtype=np.int64)
        min_d2 = np.empty(n, dtype=np.float64)
        for i in numba.prange(n):
            best = 0
            best_d = np.inf
            for c in range(k):
                acc = 0.0
                for t in range(dsub):
                    diff = x[i, t] - centroids[c, t]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = c
            assign[i] = best
            min_d2[i] = best_d
        return assign, min_d2

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


@dataclass
class TrainTrace:
    """Objective values recorded while a codebook was fitted."""

    kmeans_distortion: list[float] = field(default_factory=list)
    kmeans_per_subspace: list[list[float]] = field(default_factory=list)
    opq_objective: list[float] = field(default_factory=list)
    rotation_orthonormality: list[float] = field(default_factory=list)  # max |R^T R - I| per outer step


@dataclass
class PQCodebook:
    centroids: np.ndarray  # (m, k, dsub) float64
    trace: TrainTrace | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 3:
            raise DenseIndexError(
                f"centroids must be (m, k, dsub), got shape {self.centroids.shape}"
            )
        if not np.isfinite(self.centroids).all():
            raise DenseIndexError("centroid values must be finite")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def dsub(self) -> int:
        return self.centroids.shape[2]

    @property
    def padded_d(self) -> int:
        return self.m * self.dsub


@dataclass
class OPQRotation:
    r: np.ndarray  # (d_pad, d_pad) float64, orthonormal

    def __post_init__(self) -> None:
        self.r = np.ascontiguousarray(self.r, dtype=np.float64)
        d = self.r.shape[0]
        if self.r.shape != (d, d):
            raise DenseIndexError(f"rotation must be square, got {self.r.shape}")
        err = np.abs(self.r.T @ self.r - np.eye(d)).max()
        if err > 1e-5:
            raise DenseIndexError(f"rotation not orthonormal (max deviation {err:.2e})")


def _as_matrix(emb: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    data = emb.data if isinstance(emb, EmbeddingMatrix) else emb
    return np.asarray(data, dtype=np.float64)


def pad_columns(x: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad columns so the width is a multiple of m (inner products are
    unchanged because the padding is zero)."""
    d = x.shape[1]
    rem = d % m
    if rem == 0:
        return x
    pad = m - rem
    return np.concatenate([x, np.zeros((x.shape[0], pad), dtype=x.dtype)], axis=1)


def padded_dim(d: int, m: int) -> int:
    return d if d % m == 0 else d + (m - d % m)


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (squared Euclidean, ties to the lowest index).

    Training and encoding both go through this single implementation, so
    assignment ties resolve identically everywhere.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    if _HAVE_NUMBA:
        return _assign_kernel(x, centroids)
    return _assign_numpy(x, centroids)


def _assign_numpy(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    assign = np.empty(n, dtype=np.int64)
    min_d2 = np.empty(n, dtype=np.float64)
    for start in range(0, n, _ASSIGN_CHUNK):
        stop = min(start + _ASSIGN_CHUNK, n)
        diff = x[start:stop, None, :] - centroids[None, :, :]
        d2 = np.einsum("nkd,nkd->nk", diff, diff)
        idx = np.argmin(d2, axis=1)
        assign[start:stop] = idx
        min_d2[start:stop] = d2[np.arange(stop - start), idx]
    return assign, min_d2


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    diff = x - centroids[0]
    d2 = np.einsum("nd,nd->n", diff, diff)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        diff = x - centroids[j]
        np.minimum(d2, np.einsum("nd,nd->n", diff, diff), out=d2)
    return centroids


def _lloyd(
    x: np.ndarray,
    centroids: np.ndarray,
    iters: int,
) -> tuple[np.ndarray, list[float]]:
    """Lloyd passes from the given centroids; records the mean squared
    quantization error at each assignment step (a non-increasing sequence).
    Empty clusters keep their previous centroid."""
    n = x.shape[0]
    k = centroids.shape[0]
    centroids = centroids.copy()
    distortions: list[float] = []
    prev_assign: np.ndarray | None = None
    for _ in range(iters):
        assign, min_d2 = _assign(x, centroids)
        distortions.append(float(min_d2.mean()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        sums = np.empty_like(centroids)
        for dim in range(x.shape[1]):
            sums[:, dim] = np.bincount(assign, weights=x[:, dim], minlength=k)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
    return centroids, distortions


def _subspace_views(x: np.ndarray, m: int) -> list[np.ndarray]:
    dsub = x.shape[1] // m
    return [x[:, j * dsub:(j + 1) * dsub] for j in range(m)]


def train_pq(
    emb: EmbeddingMatrix | np.ndarray,
    m: int,
    k: int,
    iters: int = DEFAULT_KMEANS_ITERS,
    seed: int = 0,
) -> PQCodebook:
    """Independent k-means per subspace with k-means++ seeding from `seed`.

    Subspace j draws from default_rng([seed, j]) so results do not depend on
    whether subspaces are trained sequentially or in parallel.  A subspace
    whose training data is entirely zero gets all-zero centroids.
    """
    x = pad_columns(_as_matrix(emb), m)
    n = x.shape[0]
    if m < 1:
        raise DenseIndexError(f"m must be >= 1, got {m}")
    if k < 1:
        raise DenseIndexError(f"k must be >= 1, got {k}")
    if n < k:
        raise DenseIndexError(f"need at least k={k} training vectors, got {n}")
    dsub = x.shape[1] // m
    centroids = np.zeros((m, k, dsub), dtype=np.float64)
    per_subspace: list[list[float]] = []
    for j, sub in enumerate(_subspace_views(x, m)):
        if not sub.any():
            per_subspace.append([0.0])
            continue
        rng = np.random.default_rng([seed, j])
        init = _kmeans_pp_init(sub, k, rng)
        centroids[j], trace = _lloyd(sub, init, iters)
        per_subspace.append(trace)
    aggregate = _aggregate_traces(per_subspace)
    return PQCodebook(
        centroids=centroids,
        trace=TrainTrace(
            kmeans_distortion=aggregate, kmeans_per_subspace=per_subspace
        ),
    )


def _aggregate_traces(per_subspace: Sequence[Sequence[float]]) -> list[float]:
    """Sum subspace traces per iteration, carrying a converged subspace's last
    value forward; the sum of non-increasing sequences stays non-increasing."""
    if not per_subspace:
        return []
    length = max(len(t) for t in per_subspace)
    out = []
    for i in range(length):
        out.append(sum(t[min(i, len(t) - 1)] for t in per_subspace))
    return out


def train_opq(
    emb: EmbeddingMatrix | np.ndarray,
    m: int,
    k: int,
    outer_iters: int = DEFAULT_OPQ_OUTER_ITERS,
    iters: int = DEFAULT_KMEANS_ITERS,
    seed: int = 0,
) -> tuple[OPQRotation, PQCodebook]:
    """Alternate k-means (rotation fixed) with an orthogonal Procrustes update
    of the rotation (codes fixed).  Each half-step can only lower the joint
    quantization error, so the recorded objective never increases.

    With outer_iters=0 this reduces to train_pq with an identity rotation.
    """
    x = pad_columns(_as_matrix(emb), m)
    d_pad = x.shape[1]
    rotation = np.eye(d_pad, dtype=np.float64)
    codebook = train_pq(x, m, k, iters=iters, seed=seed)
    trace = codebook.trace if codebook.trace is not None else TrainTrace()

    rotated = x
    codes = encode_matrix(rotated, codebook)
    recon = decode_matrix(codes, codebook)
    trace.opq_objective.append(_mse(rotated, recon))

    for _ in range(outer_iters):
        # Procrustes: maximize tr(R^T X^T Y) subject to R^T R = I.
        u, _, vt = np.linalg.svd(x.T @ recon)
        rotation = u @ vt
        trace.rotation_orthonormality.append(
            float(np.abs(rotation.T @ rotation - np.eye(d_pad)).max())
        )
        rotated = x @ rotation
        centroids = codebook.centroids.copy()
        per_subspace: list[list[float]] = []
        for j, sub in enumerate(_subspace_views(rotated, m)):
            centroids[j], sub_trace = _lloyd(sub, centroids[j], iters)
            per_subspace.append(sub_trace)
        codebook = PQCodebook(centroids=centroids, trace=trace)
        codes = encode_matrix(rotated, codebook)
        recon = decode_matrix(codes, codebook)
        trace.opq_objective.append(_mse(rotated, recon))

    codebook.trace = trace
    return OPQRotation(r=rotation), codebook


def _mse(x: np.ndarray, y: np.ndarray) -> float:
    diff = x - y
    return float(np.einsum("nd,nd->", diff, diff) / x.shape[0])


def encode_matrix(
    x: np.ndarray,
    codebook: PQCodebook,
    rotation: OPQRotation | None = None,
) -> np.ndarray:
    """Codes (n, m) for already-padded rows; applies the rotation if given."""
    if x.shape[1] != codebook.padded_d:
        raise DenseIndexError(
            f"expected {codebook.padded_d} columns, got {x.shape[1]}"
        )
    if rotation is not None:
        x = x @ rotation.r
    codes = np.empty((x.shape[0], codebook.m), dtype=np.uint8 if codebook.k <= 256 else np.uint16)
    for j, sub in enumerate(_subspace_views(x, codebook.m)):
        assign, _ = _assign(sub, codebook.centroids[j])
        codes[:, j] = assign
    return codes


def encode(
    emb: EmbeddingMatrix | np.ndarray,
    codebook: PQCodebook,
    rotation: OPQRotation | None = None,
) -> np.ndarray:
    """Encode raw (unpadded) vectors: pad, rotate, then nearest-centroid per
    subspace with ties going to the lowest centroid index."""
    x = pad_columns(_as_matrix(emb), codebook.m)
    return encode_matrix(x, codebook, rotation)


def decode_matrix(codes: np.ndarray, codebook: PQCodebook) -> np.ndarray:
    """Reconstructions in the rotated space: concatenated selected centroids."""
    if codes.ndim != 2 or codes.shape[1] != codebook.m:
        raise DenseIndexError(f"codes must be (n, {codebook.m}), got {codes.shape}")
    if codes.size and int(codes.max()) >= codebook.k:
        raise DenseIndexError("code entry out of range")
    parts = [codebook.centroids[j][codes[:, j]] for j in range(codebook.m)]
    return np.concatenate(parts, axis=1)


def reconstruct(
    code: np.ndarray,
    codebook: PQCodebook,
    rotation: OPQRotation | None = None,
) -> np.ndarray:
    """Concatenate the selected centroids, then undo the rotation (transpose)."""
    code = np.asarray(code)
    recon = decode_matrix(code.reshape(1, -1), codebook)[0]
    if rotation is not None:
        recon = recon @ rotation.r.T
    return recon
