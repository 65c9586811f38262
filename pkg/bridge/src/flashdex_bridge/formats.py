"""Readers/writers for the engine's on-disk interchange formats.

This package talks to the retrieval engine only through its documented file
layouts, so both are implemented here independently.

FDXC corpus store (little-endian):
    "FDXC" | u32 version | u64 n_docs | u64 n_sentences | u64 text_bytes
    per document: str doc_id | str title | u32 n_sentences
    per sentence: u32 sent_idx | str text | u8 cited | u8 has_score [f64 score]
    (str = u32 byte length + utf-8 bytes)

FDXE embedding file (little-endian):
    "FDXE" | u32 version | u64 n | u32 d | u8 dtype (0 = f32)
    | u8 flags (bit 0: rows are L2-normalized)
    | n*d f32 row-major values | n x str unit ids
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

CORPUS_MAGIC = b"FDXC"
CORPUS_VERSION = 1
EMBED_MAGIC = b"FDXE"
EMBED_VERSION = 1
DTYPE_F32 = 0
FLAG_L2_NORMALIZED = 1


class BridgeFormatError(Exception):
    pass


@dataclass(frozen=True)
class CorpusSentence:
    sent_idx: int
    text: str
    cited: bool


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    title: str
    sentences: tuple[CorpusSentence, ...]


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise BridgeFormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _read_str(fh: BinaryIO) -> str:
    (length,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, length).decode("utf-8")


def _write_str(fh: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def read_corpus(path: str | Path) -> list[CorpusDocument]:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != CORPUS_MAGIC:
            raise BridgeFormatError(f"not a corpus store (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CORPUS_VERSION:
            raise BridgeFormatError(f"unsupported corpus version {version}")
        n_docs, _n_sentences, _text_bytes = struct.unpack("<QQQ", _read_exact(fh, 24))
        documents = []
        for _ in range(n_docs):
            doc_id = _read_str(fh)
            title = _read_str(fh)
            (n_sents,) = struct.unpack("<I", _read_exact(fh, 4))
            sentences = []
            for _ in range(n_sents):
                (sent_idx,) = struct.unpack("<I", _read_exact(fh, 4))
                text = _read_str(fh)
                cited = _read_exact(fh, 1)[0] == 1
                if _read_exact(fh, 1)[0] == 1:
                    _read_exact(fh, 8)  # claim score, unused for embedding
                sentences.append(CorpusSentence(sent_idx=sent_idx, text=text, cited=cited))
            documents.append(
                CorpusDocument(doc_id=doc_id, title=title, sentences=tuple(sentences))
            )
    return documents


def iter_units(
    documents: list[CorpusDocument], granularity: str = "sentence"
) -> Iterator[tuple[str, str]]:
    """(unit_id, text) in index order: sentence units are "doc_id#sent_idx",
    document units concatenate the doc's sentences."""
    if granularity in ("sentence", "sent"):
        for doc in documents:
            for sent in doc.sentences:
                yield f"{doc.doc_id}#{sent.sent_idx}", sent.text
    elif granularity in ("document", "doc"):
        for doc in documents:
            yield doc.doc_id, " ".join(s.text for s in doc.sentences)
    else:
        raise BridgeFormatError(f"unknown granularity {granularity!r}")


def write_embeddings(
    path: str | Path,
    data: np.ndarray,
    ids: list[str],
    l2_normalized: bool,
) -> None:
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[0] != len(ids):
        raise BridgeFormatError(
            f"bad embedding shape {data.shape} for {len(ids)} ids"
        )
    with Path(path).open("wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<I", EMBED_VERSION))
        fh.write(struct.pack("<Q", data.shape[0]))
        fh.write(struct.pack("<I", data.shape[1]))
        fh.write(struct.pack("<B", DTYPE_F32))
        fh.write(struct.pack("<B", FLAG_L2_NORMALIZED if l2_normalized else 0))
        fh.write(data.astype("<f4", copy=False).tobytes(order="C"))
        for unit_id in ids:
            _write_str(fh, unit_id)


def read_embedding_header(path: str | Path) -> tuple[int, int, bool]:
    """(n, d, l2_normalized) from an FDXE header."""
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != EMBED_MAGIC:
            raise BridgeFormatError(f"not an embedding file (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != EMBED_VERSION:
            raise BridgeFormatError(f"unsupported embedding version {version}")
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        (d,) = struct.unpack("<I", _read_exact(fh, 4))
        (dtype,) = struct.unpack("<B", _read_exact(fh, 1))
        if dtype != DTYPE_F32:
            raise BridgeFormatError(f"unsupported dtype tag {dtype}")
        (flags,) = struct.unpack("<B", _read_exact(fh, 1))
    return n, d, bool(flags & FLAG_L2_NORMALIZED)
