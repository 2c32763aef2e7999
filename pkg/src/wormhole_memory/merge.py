"""Residual merge of retrieved memory into a session context state, and
chain-of-thought provenance tags."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embedder import EmbeddingVector
from .errors import ContractViolation
from .retrieval import RetrievalResult

SNIPPET_CHARS = 200


@dataclass(frozen=True)
class ContextState:
    values: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "ContextState":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MergeParams:
    gate: float = 0.5
    w_r_scale: float = 1.0
    # when set, the gate is exp(-d) of the retrieval being merged
    adaptive_gate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gate <= 1.0:
            raise ContractViolation(f"gate must lie in [0, 1], got {self.gate}")


def adaptive_gate(d: float) -> float:
    return math.exp(-d)


def residual_merge(h: ContextState, retrieved: EmbeddingVector, p: MergeParams = MergeParams(),
                   gate: Optional[float] = None) -> ContextState:
    """H' = H + gate * w_r_scale * retrieved. W_r is a scalar times identity here."""
    if h.dim != retrieved.dim:
        raise ContractViolation(f"dimension mismatch: {h.dim} vs {retrieved.dim}")
    g = p.gate if gate is None else gate
    return ContextState(h.values + (g * p.w_r_scale) * retrieved.values)


@dataclass(frozen=True)
class CoTTag:
    ordinal: int
    session_id: str
    seq: int
    snippet: str
    d: float

    def to_dict(self) -> dict:
        return {"ordinal": self.ordinal, "session_id": self.session_id, "seq": self.seq,
                "snippet": self.snippet, "d": self.d}


def cot_integrate(results: list[RetrievalResult]) -> list[CoTTag]:
    """One tag per result, ordered by source timestamp then seq."""
    ordered = sorted(results, key=lambda r: (r.record.key.timestamp, r.record.seq))
    return [CoTTag(i, r.record.key.session_id, r.record.seq,
                   r.record.payload_text[:SNIPPET_CHARS], r.d)
            for i, r in enumerate(ordered, start=1)]
