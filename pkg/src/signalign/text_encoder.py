"""Deterministic frozen text embedding.

Stands in for a large pretrained language encoder: text folds to a token
multiset, every token hashes (stable across processes) to a seeded
Gaussian direction, and the count-weighted sum is L2-normalized.  There
are no learnable parameters, so gradients never flow into this module;
the ``TextEncoder`` wrapper counts invocations so the evaluation path can
prove it never called it.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

__all__ = [
    "EncodingError",
    "fold_tokens",
    "token_id",
    "encode_text",
    "TextFeature",
    "TextEncoder",
]

MIN_DIM = 8

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EncodingError(ValueError):
    """Text reduces to nothing encodable."""


def fold_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, split into alphanumeric tokens."""
    return _TOKEN_RE.findall(text.lower())


def token_id(token: str) -> int:
    """Stable 64-bit token identity (independent of process hash seeds)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _token_direction(token: str, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng((token_id(token) ^ (seed & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF)
    return rng.standard_normal(dim)


def encode_text(text: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Unit-norm embedding of ``text``; deterministic in (text, dim, seed).

    Token order is irrelevant (bag of tokens); repeated tokens weight
    their direction linearly before normalization.  Text with no
    alphanumeric content raises :class:`EncodingError`.
    """
    if dim < MIN_DIM:
        raise ValueError(f"dim must be at least {MIN_DIM}, got {dim}")
    toks = fold_tokens(text)
    if not toks:
        raise EncodingError(f"text has no encodable tokens: {text!r}")
    counts: dict[str, int] = {}
    for t in toks:
        counts[t] = counts.get(t, 0) + 1
    acc = np.zeros(dim)
    # accumulate in sorted token order so float summation order is fixed
    for tok in sorted(counts):
        acc += counts[tok] * _token_direction(tok, dim, seed)
    norm = float(np.linalg.norm(acc))
    if norm < 1e-30:
        raise EncodingError("token directions cancelled to zero norm")
    return acc / norm


@dataclass(frozen=True)
class TextFeature:
    """Embedding plus the identity of the description it came from."""

    vector: np.ndarray
    record_id: str


class TextEncoder:
    """Configured encoder with an invocation counter.

    ``calls`` increments once per encoded text; inference-parity checks
    assert it stays flat while evaluating.
    """

    def __init__(self, dim: int = 256, seed: int = 0) -> None:
        if dim < MIN_DIM:
            raise ValueError(f"dim must be at least {MIN_DIM}, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self.calls = 0
        self._cache: dict[str, np.ndarray] = {}
        self.cache_enabled = False

    def encode(self, text: str) -> np.ndarray:
        self.calls += 1
        if self.cache_enabled:
            hit = self._cache.get(text)
            if hit is not None:
                return hit
            vec = encode_text(text, self.dim, self.seed)
            self._cache[text] = vec
            return vec
        return encode_text(text, self.dim, self.seed)

    def encode_batch(self, records) -> list[TextFeature]:
        """Encode description records in order, preserving record linkage."""
        out = []
        for rec in records:
            out.append(TextFeature(vector=self.encode(rec.text), record_id=rec.record_id))
        return out

    def encode_matrix(self, texts) -> Tensor:
        """Stack embeddings for a text list into a constant [M, dim] tensor."""
        if not texts:
            raise EncodingError("cannot build a feature matrix from zero texts")
        return Tensor(np.stack([self.encode(t) for t in texts], axis=0))
