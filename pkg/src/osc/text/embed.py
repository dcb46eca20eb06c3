"""Signed feature hashing of token streams into fixed 128-dim vectors.

Features are unigrams plus bigrams of adjacent *distinct* tokens (an adjacent
duplicate pair adds no bigram, so repeating a token only rescales its
contribution). Each feature hashes to a bucket in [0, 128) via the low 7 bits
of a keyed blake2b digest; the parity of the remaining bits gives the sign.
Vectors are L2-normalized; empty input maps to the zero vector.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

EMBED_DIM = 128


@lru_cache(maxsize=65536)
def _feature_slot(feature: str) -> tuple[int, float]:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    bucket = h % EMBED_DIM
    sign = 1.0 if (h // EMBED_DIM) % 2 == 0 else -1.0
    return bucket, sign


def feature_embed(tokens: list[str], bigrams: bool = True) -> np.ndarray:
    """Hash tokens into a unit-norm 128-vector (zero vector for no tokens).

    The `bigrams` hook exists for order-invariance tests; production callers
    always leave it on.
    """
    vec = np.zeros(EMBED_DIM)
    if not tokens:
        return vec
    for tok in tokens:
        bucket, sign = _feature_slot("1:" + tok)
        vec[bucket] += sign
    if bigrams:
        for left, right in zip(tokens, tokens[1:]):
            if left == right:
                continue
            bucket, sign = _feature_slot("2:" + left + "\x1f" + right)
            vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return vec
    return vec / norm


def condense_history(embeddings: list[np.ndarray], window: int = 5) -> np.ndarray:
    """Mean of the last `window` utterance embeddings, re-normalized."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not embeddings:
        return np.zeros(EMBED_DIM)
    recent = embeddings[-window:]
    mean = np.mean(recent, axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        return np.zeros(EMBED_DIM)
    return mean / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
