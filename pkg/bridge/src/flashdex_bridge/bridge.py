"""Embedding export: corpus store in, FDXE file out.

Model mode encodes every indexing unit with a pretrained sentence encoder
(batched, symmetric for queries and documents); hash mode reproduces the
engine's built-in test embedder byte-for-byte so interchange can be verified
without downloading a model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import iter_units, read_corpus, write_embeddings
from .hashing import hash_embed_text

DEFAULT_MODEL = "all-MiniLM-L6-v2"
DEFAULT_HASH_DIM = 384
DEFAULT_HASH_SEED = 7


class BridgeError(Exception):
    pass


@dataclass
class BridgeConfig:
    corpus_path: str | Path
    output_path: str | Path
    mode: str = "model"               # "model" | "hash"
    model_name: str = DEFAULT_MODEL
    batch_size: int = 64
    normalize: bool = True
    granularity: str = "sentence"
    dim: int = DEFAULT_HASH_DIM       # hash mode only
    seed: int = DEFAULT_HASH_SEED     # hash mode only

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise BridgeError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in ("model", "hash"):
            raise BridgeError(f"unknown mode {self.mode!r}")


def export_embeddings(config: BridgeConfig) -> tuple[int, int]:
    """Write one embedding row per indexing unit; returns (n, d)."""
    documents = read_corpus(config.corpus_path)
    units = list(iter_units(documents, config.granularity))
    ids = [unit_id for unit_id, _ in units]
    texts = [text for _, text in units]
    if config.mode == "hash":
        data = np.zeros((len(units), config.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            data[row] = hash_embed_text(text, config.dim, config.seed)
        normalized = True
    else:
        data = _encode_with_model(config, texts)
        normalized = config.normalize
    write_embeddings(config.output_path, data, ids, l2_normalized=normalized)
    return data.shape[0], data.shape[1]


def _encode_with_model(config: BridgeConfig, texts: list[str]) -> np.ndarray:
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise BridgeError(
            "model mode needs the sentence-transformers package "
            "(pip install flashdex-bridge[model])"
        ) from exc
    try:
        model = SentenceTransformer(config.model_name)
    except Exception as exc:
        raise BridgeError(f"could not load model {config.model_name!r}: {exc}") from exc
    dim = model.get_sentence_embedding_dimension()
    if not texts:
        return np.zeros((0, dim), dtype=np.float32)
    encoded = model.encode(
        texts,
        batch_size=config.batch_size,
        normalize_embeddings=config.normalize,
        convert_to_numpy=True,
        show_progress_bar=False,
    ).astype(np.float32)
    if encoded.shape[1] != dim:
        raise BridgeError(
            f"model emitted dimension {encoded.shape[1]}, header declares {dim}"
        )
    return encoded
