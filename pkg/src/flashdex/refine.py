"""Ranking-supervised centroid refinement over a compressed index.

Query embeddings are fixed; only codebook centroids move.  Each epoch walks
the training pairs, mines the current top-scoring non-positive documents as
hard negatives, and takes one gradient step per pair on the pairwise logistic
loss ln(1 + exp(s(q, d-) - s(q, d+))), touching exactly the centroid cells
referenced by the positive/negative codes.

Document codes stay fixed within an epoch.  Between epochs documents are
re-encoded against the updated centroids; the index stores only codes, so the
initial reconstructions (decoded once, in rotated space) stand in for the raw
document vectors during re-encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compressed import CompressedIndex, adc_scan
from .dense import DenseIndexError, EmbeddingMatrix
from .pq import PQCodebook, decode_matrix, encode_matrix, pad_columns

DEFAULT_HARD_NEGATIVES = 5


class RefineError(Exception):
    pass


@dataclass(frozen=True)
class TrainPair:
    query_row: int
    positive_id: str
    negatives: tuple[str, ...] = ()  # empty: mine from the index


@dataclass
class RefineResult:
    index: CompressedIndex
    epoch_mean_loss: list[float]


def _softplus(x: float) -> float:
    if x > 30.0:
        return x
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def pair_step(
    centroids: np.ndarray,
    q_rot: np.ndarray,
    pos_code: np.ndarray,
    neg_codes: np.ndarray,
    lr: float,
) -> float:
    """One in-place descent step on the loss summed over this pair's
    negatives; returns that summed loss (measured before the step).

    The positive's cell in subspace j gains lr * sigma(margin) * q_j and each
    negative's cell loses it, so a subspace where positive and negative share
    a cell is a net no-op (its true gradient is zero).
    """
    m, _, dsub = centroids.shape
    q_sub = q_rot.reshape(m, dsub)
    cols = np.arange(m)
    s_pos = float(np.einsum("md,md->", q_sub, centroids[cols, pos_code]))
    total_loss = 0.0
    grad_pos = 0.0
    updates = []
    for neg_code in neg_codes:
        s_neg = float(np.einsum("md,md->", q_sub, centroids[cols, neg_code]))
        margin = s_neg - s_pos
        total_loss += _softplus(margin)
        g = _sigmoid(margin)
        grad_pos += g
        updates.append((neg_code, g))
    for neg_code, g in updates:
        np.subtract.at(centroids, (cols, neg_code), lr * g * q_sub)
    np.add.at(centroids, (cols, pos_code), lr * grad_pos * q_sub)
    return total_loss


def refine_centroids(
    index: CompressedIndex,
    query_emb: EmbeddingMatrix,
    pairs: list[TrainPair],
    epochs: int,
    lr: float,
    n_hard_negatives: int = DEFAULT_HARD_NEGATIVES,
) -> RefineResult:
    """Gradient descent on the centroids under the pairwise ranking loss.

    epochs=0 returns the index unchanged.  Hard negatives are re-mined every
    epoch from the index being trained: the top ADC scorers that are not
    judged positives for the pair's query, ties broken by id ascending.
    """
    if not pairs:
        raise RefineError("no training pairs")
    if lr <= 0:
        raise RefineError(f"learning rate must be > 0, got {lr}")
    if epochs < 0:
        raise RefineError(f"epochs must be >= 0, got {epochs}")
    id_to_row = {uid: i for i, uid in enumerate(index.ids)}
    for pair in pairs:
        if pair.positive_id not in id_to_row:
            raise RefineError(f"positive id {pair.positive_id!r} not in index")
        for neg in pair.negatives:
            if neg not in id_to_row:
                raise RefineError(f"negative id {neg!r} not in index")
        if not 0 <= pair.query_row < query_emb.n:
            raise RefineError(f"query_row {pair.query_row} out of range")
    if epochs == 0:
        return RefineResult(index=index, epoch_mean_loss=[])

    positives_by_query: dict[int, set[int]] = {}
    for pair in pairs:
        positives_by_query.setdefault(pair.query_row, set()).add(
            id_to_row[pair.positive_id]
        )

    queries = pad_columns(query_emb.data.astype(np.float64), index.codebook.m)
    if index.rotation is not None:
        if queries.shape[1] != index.rotation.r.shape[0]:
            raise DenseIndexError(
                f"query dimension {query_emb.d} does not match index "
                f"({index.original_d})"
            )
        queries = queries @ index.rotation.r
    ids = index.ids

    centroids = index.codebook.centroids.copy()
    codes = index.codes.copy()
    # Stand-ins for the raw document vectors, already in rotated space.
    representatives = decode_matrix(codes, index.codebook)
    epoch_mean_loss: list[float] = []

    for _ in range(epochs):
        codes_t = np.ascontiguousarray(codes.T)
        total_loss = 0.0
        n_terms = 0
        for pair in pairs:
            q_rot = queries[pair.query_row]
            if pair.negatives:
                neg_rows = [id_to_row[neg] for neg in pair.negatives]
            else:
                neg_rows = _mine_hard_negatives(
                    codes_t,
                    centroids,
                    q_rot,
                    ids,
                    exclude=positives_by_query[pair.query_row],
                    n=n_hard_negatives,
                )
            if not neg_rows:
                continue
            pos_code = codes[id_to_row[pair.positive_id]].astype(np.int64)
            neg_code_rows = codes[neg_rows].astype(np.int64)
            total_loss += pair_step(centroids, q_rot, pos_code, neg_code_rows, lr)
            n_terms += len(neg_rows)
        epoch_mean_loss.append(total_loss / n_terms if n_terms else 0.0)
        codes = encode_matrix(representatives, PQCodebook(centroids=centroids))

    refined = CompressedIndex(
        codebook=PQCodebook(centroids=centroids),
        rotation=index.rotation,
        codes=codes,
        ids=list(index.ids),
        original_d=index.original_d,
    )
    return RefineResult(index=refined, epoch_mean_loss=epoch_mean_loss)


def _mine_hard_negatives(
    codes_t: np.ndarray,
    centroids: np.ndarray,
    q_rot: np.ndarray,
    ids: list[str],
    exclude: set[int],
    n: int,
) -> list[int]:
    m, _, dsub = centroids.shape
    lut = np.ascontiguousarray(
        np.einsum("mkd,md->mk", centroids, q_rot.reshape(m, dsub))
    )
    scores = adc_scan(codes_t, lut)
    want = n + len(exclude)
    n_docs = scores.shape[0]
    if want >= n_docs:
        candidates = np.arange(n_docs)
    else:
        part = np.argpartition(-scores, want - 1)[:want]
        candidates = np.flatnonzero(scores >= scores[part].min())
    order = sorted(candidates.tolist(), key=lambda i: (-scores[i], ids[i]))
    return [i for i in order if i not in exclude][:n]


def load_pairs(path) -> list[TrainPair]:
    """TSV pairs file: query_row <TAB> positive_id [<TAB> neg1,neg2,...]."""
    from pathlib import Path

    pairs: list[TrainPair] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise RefineError(f"pairs file line {lineno}: expected 2 or 3 fields")
            negatives: tuple[str, ...] = ()
            if len(parts) == 3 and parts[2]:
                negatives = tuple(parts[2].split(","))
            pairs.append(
                TrainPair(
                    query_row=int(parts[0]),
                    positive_id=parts[1],
                    negatives=negatives,
                )
            )
    return pairs
