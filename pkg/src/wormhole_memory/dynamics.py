"""Surprise-gated memory updates: momentum merge above the threshold, salience
decay at or below it."""

from __future__ import annotations

from dataclasses import dataclass

from .embedder import EmbeddingVector, l2_distance
from .errors import ContractViolation
from .store import AxisFilter, MemoryRecord, MemoryStore


@dataclass(frozen=True)
class DynamicsParams:
    alpha_momentum: float = 0.3
    lambda_decay: float = 0.01
    tau_surprise: float = 0.5

    def __post_init__(self):
        _unit("alpha_momentum", self.alpha_momentum)
        _unit("lambda_decay", self.lambda_decay)
        if not self.tau_surprise >= 0:
            raise ContractViolation(f"tau_surprise must be >= 0, got {self.tau_surprise}")


def _unit(name, value):
    if not 0.0 <= value <= 1.0:
        raise ContractViolation(f"{name} must lie in [0, 1], got {value}")


def _same_dim(a: EmbeddingVector, b: EmbeddingVector):
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} vs {b.dim}")


def surprise(delta_x: EmbeddingVector, m: EmbeddingVector) -> float:
    _same_dim(delta_x, m)
    return l2_distance(delta_x.values, m.values)


def momentum_merge(m: EmbeddingVector, delta_x: EmbeddingVector, alpha: float) -> EmbeddingVector:
    """(1 - alpha) * m + alpha * delta_x, left un-normalized."""
    _same_dim(m, delta_x)
    _unit("alpha", alpha)
    if alpha == 0.0:
        return m
    if alpha == 1.0:
        return delta_x
    return EmbeddingVector.from_values((1.0 - alpha) * m.values + alpha * delta_x.values)


def decay(m: EmbeddingVector, weight: float, lam: float) -> tuple[EmbeddingVector, float]:
    _unit("lambda", lam)
    _unit("weight", weight)
    return m, weight * (1.0 - lam)


@dataclass(frozen=True)
class UpdateOutcome:
    kind: str  # "merged" | "decayed" | "inserted"
    seq: int
    surprise: float | None = None
    inserted_seq: int | None = None

    def __str__(self):
        return f"{self.kind.capitalize()}({self.seq})"


def apply_update(store: MemoryStore, target_filter: AxisFilter, delta_record: MemoryRecord,
                 params: DynamicsParams = DynamicsParams()) -> UpdateOutcome:
    """Route one new memory through the surprise gate.

    The nearest record under ``target_filter`` is merged toward the input when
    the surprise strictly exceeds ``tau_surprise``; otherwise its weight decays
    and the input is stored as a fresh record. With no candidate the input is
    simply inserted.
    """
    with store.lock.write():
        hit = store.nearest(delta_record.embedding, target_filter, k=1)
        if not hit:
            return UpdateOutcome("inserted", store.insert(delta_record))
        nearest, _ = hit[0]
        s = surprise(delta_record.embedding, nearest.embedding)
        if s > params.tau_surprise:
            merged = momentum_merge(nearest.embedding, delta_record.embedding,
                                    params.alpha_momentum)
            store.set_embedding(nearest.seq, merged)
            return UpdateOutcome("merged", nearest.seq, s)
        _, w = decay(nearest.embedding, nearest.weight, params.lambda_decay)
        store.set_weight(nearest.seq, w)
        new_seq = store.insert(delta_record)
        return UpdateOutcome("decayed", nearest.seq, s, new_seq)
