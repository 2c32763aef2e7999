"""Cross-dialogue retrieval: query building, the per-axis correction term,
composite distance, Top-K and argmin selection.

Composite distance::

    d(q, r) = ||v_q - v_r||_2 + beta_hierarchy * h(q, r)
    h(q, r) = w_user * [user differs]
            + w_topic * (1 - cos(topic_q, topic_r)) / 2
            + w_time * min(1, |t_q - t_r| / time_horizon)

The salience weight of a record never enters ``d``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .embedder import EmbedderConfig, EmbeddingVector, cosine, embed, l2_distance
from .errors import ContractViolation, NoCandidates, ValidationError
from .store import AxisFilter, MemoryRecord, MemoryStore, quantize, shortlist


@dataclass(frozen=True)
class Query:
    origin_session: str
    user_id: str
    topic_text: str
    query_text: str
    query_embedding: EmbeddingVector
    topic_embedding: EmbeddingVector
    timestamp: int
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation(f"k must be >= 1, got {self.k}")
        if self.query_embedding.dim != self.topic_embedding.dim:
            raise ContractViolation("query and topic embeddings differ in dimension")


@dataclass(frozen=True)
class RetrievalParams:
    beta_hierarchy: float = 0.5
    w_user: float = 1.0
    w_topic: float = 0.5
    w_time: float = 0.25
    time_horizon: int = 1000

    def __post_init__(self):
        for name in ("beta_hierarchy", "w_user", "w_topic", "w_time"):
            if not getattr(self, name) >= 0:
                raise ContractViolation(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.time_horizon > 0:
            raise ContractViolation(f"time_horizon must be > 0, got {self.time_horizon}")

    @property
    def h_max(self) -> float:
        return self.w_user + self.w_topic + self.w_time


@dataclass(frozen=True)
class RetrievalResult:
    record: MemoryRecord
    l2: float
    h: float
    d: float
    rank: int


def build_query(user_id: str, topic_text: str, query_text: str, origin_session: str,
                timestamp: int, k: int, embedder: EmbedderConfig | None = None) -> Query:
    if not user_id:
        raise ValidationError("user_id must be non-empty")
    if not query_text:
        raise ValidationError("query_text must be non-empty")
    embedder = embedder or EmbedderConfig()
    # query vectors live at store precision so a stored copy of the same text matches exactly
    vq = EmbeddingVector.from_values(quantize(embed(query_text, embedder).values))
    return Query(origin_session, user_id, topic_text, query_text,
                 vq, embed(topic_text, embedder), timestamp, k)


def hierarchy_correction(q: Query, r: MemoryRecord, p: RetrievalParams) -> float:
    user = p.w_user if q.user_id != r.key.user_id else 0.0
    topic = p.w_topic * (1.0 - cosine(q.topic_embedding, r.key.topic_vector)) / 2.0
    time = p.w_time * min(1.0, abs(q.timestamp - r.key.timestamp) / p.time_horizon)
    return user + topic + time


def distance(q: Query, r: MemoryRecord, p: RetrievalParams) -> float:
    return _score(q, r, p)[2]


def _score(q: Query, r: MemoryRecord, p: RetrievalParams) -> tuple[float, float, float]:
    if q.query_embedding.dim != r.embedding.dim:
        raise ContractViolation(
            f"dimension mismatch: query {q.query_embedding.dim} vs record {r.embedding.dim}")
    l2 = l2_distance(q.query_embedding.values, r.embedding.values)
    h = hierarchy_correction(q, r, p)
    return l2, h, l2 + p.beta_hierarchy * h


def _approx_scores(q: Query, store: MemoryStore, seqs: np.ndarray, p: RetrievalParams) -> np.ndarray:
    diff = store.embedding_matrix[seqs] - q.query_embedding.values
    l2 = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if p.beta_hierarchy == 0.0:
        return l2
    user = (store.user_codes()[seqs] != store.user_code(q.user_id)) * p.w_user
    topics = store.topic_matrix[seqs]
    if q.topic_embedding.degenerate:
        cos = np.zeros(seqs.shape[0])
    else:
        tq = q.topic_embedding.values
        norms = np.sqrt(np.einsum("ij,ij->i", topics, topics))
        safe = np.where(norms > 0, norms, 1.0)
        cos = np.where(norms > 0, (topics @ tq) / (safe * np.sqrt(tq @ tq)), 0.0)
        cos = np.clip(cos, -1.0, 1.0)
    topic = p.w_topic * (1.0 - cos) / 2.0
    dt = np.abs(store.timestamps[seqs] - q.timestamp) / p.time_horizon
    time = p.w_time * np.minimum(1.0, dt)
    return l2 + p.beta_hierarchy * (user + topic + time)


def top_k(q: Query, store: MemoryStore, p: RetrievalParams = RetrievalParams(),
          scope: AxisFilter = AxisFilter()) -> list[RetrievalResult]:
    """The ``q.k`` records minimizing d within ``scope``; ties go to the lower seq.

    A vectorized pass ranks every candidate, then the few that could be in the
    top-k are rescored with exact summation so the order is reproducible.
    """
    if q.query_embedding.dim != store.dim:
        raise ContractViolation(f"query dimension {q.query_embedding.dim} != store {store.dim}")
    with store.lock.read():
        seqs = store.candidate_seqs(scope)
        if seqs.size == 0:
            return []
        approx = _approx_scores(q, store, seqs, p)
        exact = []
        for s in seqs[shortlist(approx, q.k)].tolist():
            rec = store.get(s)
            l2, h, d = _score(q, rec, p)
            exact.append((d, s, l2, h, rec))
        exact.sort(key=lambda t: (t[0], t[1]))
        return [RetrievalResult(rec, l2, h, d, rank)
                for rank, (d, _, l2, h, rec) in enumerate(exact[: q.k], start=1)]


def retrieve_best(q: Query, store: MemoryStore, p: RetrievalParams = RetrievalParams(),
                  scope: AxisFilter = AxisFilter()) -> RetrievalResult:
    results = top_k(dataclasses.replace(q, k=1), store, p, scope)
    if not results:
        raise NoCandidates("no records in the authorized scope")
    return results[0]
