"""The engine's deterministic test embedder, reproduced bit-for-bit.

Recipe (documented with the FDXE format): NFC-lowercase the text and take
alphanumeric runs (underscore excluded) as tokens; hash each token with
blake2b (digest 8, key = seed as little-endian i64) into a u64; bit 0 gives
the sign, the remaining bits pick the bucket modulo the dimension; accumulate
in float64, L2-normalize in float64, cast the row to float32.
"""

from __future__ import annotations

import hashlib
import re
import struct
import unicodedata

import numpy as np

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(unicodedata.normalize("NFC", text).lower())


def hash_embed_text(text: str, dim: int, seed: int) -> np.ndarray:
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
