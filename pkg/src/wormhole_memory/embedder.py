"""Deterministic hashed n-gram text embeddings.

Pipeline: lowercase, split on non-alphanumeric runs, emit unigrams and
adjacent bigrams, hash each feature with 64-bit FNV-1a into ``dim`` signed
buckets (bucket = hash mod dim, sign = top bit), then L2-normalize.

Counts are accumulated as Python ints and the norm is taken over an exact
integer sum of squares, so the output is bit-identical on every platform.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractViolation

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[^\W_]+")


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 256
    ngram_max: int = 2

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 2:
            raise ContractViolation(f"dim must be an integer >= 2, got {self.dim!r}")
        if self.ngram_max != 2:
            raise ContractViolation("ngram_max is fixed at 2")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A float64 vector plus a flag marking the all-zero 'no tokens' case."""

    values: np.ndarray
    degenerate: bool = False

    @classmethod
    def from_values(cls, values) -> "EmbeddingVector":
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        return cls(arr, degenerate=not bool(np.any(arr)))

    @classmethod
    def zeros(cls, dim: int) -> "EmbeddingVector":
        return cls.from_values(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.dim

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return (self.degenerate == other.degenerate
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes())

    def __hash__(self):
        return hash(self.values.tobytes())

    def __neg__(self):
        return EmbeddingVector.from_values(-self.values)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def features(tokens: list[str]) -> list[str]:
    feats = list(tokens)
    feats.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return feats


@lru_cache(maxsize=65536)
def _embed_cached(text: str, dim: int) -> EmbeddingVector:
    feats = features(tokenize(text))
    if not feats:
        return EmbeddingVector.zeros(dim)
    counts = [0] * dim
    for feat in feats:
        h = fnv1a_64(feat.encode("utf-8"))
        counts[h % dim] += -1 if h >> 63 else 1
    sq = sum(c * c for c in counts)
    if sq == 0:
        # every feature cancelled out against an opposite-signed collision
        return EmbeddingVector.zeros(dim)
    norm = math.sqrt(sq)
    return EmbeddingVector.from_values([c / norm for c in counts])


def embed(text: str, config: EmbedderConfig | None = None) -> EmbeddingVector:
    config = config or EmbedderConfig()
    return _embed_cached(text, config.dim)


def _check_dims(a: EmbeddingVector, b: EmbeddingVector):
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} vs {b.dim}")


def dot(a: np.ndarray, b: np.ndarray) -> float:
    return math.fsum(np.multiply(a, b).tolist())


def l2_norm(a: np.ndarray) -> float:
    return math.sqrt(dot(a, a))


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Exact-summation Euclidean distance; the reference every fast path is checked against."""
    diff = np.subtract(a, b)
    return math.sqrt(dot(diff, diff))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    _check_dims(a, b)
    if a.degenerate or b.degenerate:
        return 0.0
    if a == b:
        return 1.0
    c = dot(a.values, b.values) / (l2_norm(a.values) * l2_norm(b.values))
    return min(1.0, max(-1.0, c))
