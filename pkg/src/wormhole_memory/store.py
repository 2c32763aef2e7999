"""Multi-axis indexed memory store: the (key, vector) mapping plus axis
filtering, exact nearest-neighbour search, and line-oriented persistence.

Stored embeddings are rounded to float32 precision on the way in, so the
9-significant-digit file format round-trips them bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .embedder import EmbedderConfig, EmbeddingVector, embed, l2_distance
from .errors import ConfigurationError, ContractViolation, FormatError, StoreVersionError

FORMAT_VERSION = "v1"
HEADER_PREFIX = "WMMSTORE"

# absolute slack between the vectorized distance pass and exact rescoring
SHORTLIST_MARGIN = 1e-9


@dataclass(frozen=True)
class MemoryKey:
    user_id: str
    topic_label: str
    topic_vector: EmbeddingVector
    timestamp: int
    session_id: str

    def __post_init__(self):
        if not self.user_id:
            raise ContractViolation("user_id must be non-empty")
        if not self.session_id:
            raise ContractViolation("session_id must be non-empty")
        if self.timestamp < 0:
            raise ContractViolation(f"timestamp must be >= 0, got {self.timestamp}")


def make_key(user_id: str, topic_label: str, timestamp: int, session_id: str,
             dim: int = 256) -> MemoryKey:
    return MemoryKey(user_id, topic_label, embed(topic_label, EmbedderConfig(dim)),
                     timestamp, session_id)


@dataclass
class MemoryRecord:
    key: MemoryKey
    payload_text: str
    answer_text: str
    embedding: EmbeddingVector
    weight: float = 1.0
    seq: Optional[int] = None
    update_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ContractViolation(f"weight must lie in [0, 1], got {self.weight}")
        if self.update_count < 0:
            raise ContractViolation("update_count must be >= 0")

    @property
    def session_id(self) -> str:
        return self.key.session_id

    @property
    def ref(self) -> tuple[str, int]:
        return (self.key.session_id, self.seq)


@dataclass(frozen=True)
class AxisFilter:
    user_id: Optional[str] = None
    session_ids: Optional[frozenset] = None
    time_range: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.session_ids is not None and not isinstance(self.session_ids, frozenset):
            object.__setattr__(self, "session_ids", frozenset(self.session_ids))
        if self.time_range is not None:
            lo, hi = self.time_range
            if lo > hi:
                raise ContractViolation(f"time_range lo > hi: {self.time_range}")
            object.__setattr__(self, "time_range", (int(lo), int(hi)))

    def matches(self, key: MemoryKey) -> bool:
        if self.user_id is not None and key.user_id != self.user_id:
            return False
        if self.session_ids is not None and key.session_id not in self.session_ids:
            return False
        if self.time_range is not None:
            lo, hi = self.time_range
            if not lo <= key.timestamp <= hi:
                return False
        return True


class RWLock:
    """Many readers or one writer. The writing thread may re-enter both
    read and write sections; a reader must not try to upgrade."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = None
        self._depth = 0

    @contextmanager
    def read(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                reentrant = True
            else:
                reentrant = False
                while self._writer is not None:
                    self._cond.wait()
                self._readers += 1
        try:
            yield
        finally:
            if not reentrant:
                with self._cond:
                    self._readers -= 1
                    if self._readers == 0:
                        self._cond.notify_all()

    @contextmanager
    def write(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer != me:
                while self._writer is not None or self._readers > 0:
                    self._cond.wait()
                self._writer = me
            self._depth += 1
        try:
            yield
        finally:
            with self._cond:
                self._depth -= 1
                if self._depth == 0:
                    self._writer = None
                    self._cond.notify_all()


def quantize(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def shortlist(approx: np.ndarray, k: int, margin: float = SHORTLIST_MARGIN) -> np.ndarray:
    """Indices whose approximate score could still belong to the exact top-k."""
    n = approx.shape[0]
    if k >= n:
        return np.arange(n)
    kth = np.partition(approx, k - 1)[k - 1]
    return np.flatnonzero(approx <= kth + margin)


class MemoryStore:
    """In-memory store. Sequence numbers equal insertion positions (no deletes)."""

    def __init__(self, dim: int = 256, index: str = "exhaustive"):
        if index not in ("exhaustive", "pivot"):
            raise ConfigurationError(f"unknown index kind {index!r}")
        EmbedderConfig(dim)
        self.dim = dim
        self.index = index
        self.lock = RWLock()
        self._records: list[MemoryRecord] = []
        self._emb = np.zeros((16, dim))
        self._topic = np.zeros((16, dim))
        self._time = np.zeros(16, dtype=np.int64)
        self._user_code = np.zeros(16, dtype=np.int64)
        self._user_codes: dict[str, int] = {}
        self._by_user: dict[str, list[int]] = {}
        self._by_session: dict[str, list[int]] = {}
        self._pivots: Optional[_PivotIndex] = None

    def __len__(self):
        return len(self._records)

    @property
    def size(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[MemoryRecord]:
        return iter(list(self._records))

    @property
    def records(self) -> list[MemoryRecord]:
        return list(self._records)

    def get(self, seq: int) -> MemoryRecord:
        return self._records[seq]

    def sessions(self) -> list[str]:
        return list(self._by_session)

    def users(self) -> list[str]:
        return list(self._by_user)

    # -- arrays for vectorized scoring; rows are indexed by seq
    @property
    def embedding_matrix(self) -> np.ndarray:
        return self._emb[: len(self._records)]

    @property
    def topic_matrix(self) -> np.ndarray:
        return self._topic[: len(self._records)]

    @property
    def timestamps(self) -> np.ndarray:
        return self._time[: len(self._records)]

    def user_codes(self) -> np.ndarray:
        return self._user_code[: len(self._records)]

    def user_code(self, user_id: str) -> int:
        return self._user_codes.get(user_id, -1)

    def _grow(self):
        cap = self._emb.shape[0] * 2
        for name in ("_emb", "_topic"):
            arr = np.zeros((cap, self.dim))
            arr[: len(self._records)] = getattr(self, name)[: len(self._records)]
            setattr(self, name, arr)
        for name in ("_time", "_user_code"):
            arr = np.zeros(cap, dtype=np.int64)
            arr[: len(self._records)] = getattr(self, name)[: len(self._records)]
            setattr(self, name, arr)

    def _check_dim(self, vec: EmbeddingVector, what: str):
        if vec.dim != self.dim:
            raise ConfigurationError(f"{what} has dimension {vec.dim}, store expects {self.dim}")

    def insert(self, record: MemoryRecord) -> int:
        self._check_dim(record.embedding, "embedding")
        self._check_dim(record.key.topic_vector, "topic vector")
        if record.seq is not None:
            raise ContractViolation("record.seq is assigned by the store")
        with self.lock.write():
            seq = len(self._records)
            stored = dataclasses.replace(
                record, seq=seq,
                embedding=EmbeddingVector.from_values(quantize(record.embedding.values)))
            if seq == self._emb.shape[0]:
                self._grow()
            self._records.append(stored)
            self._emb[seq] = stored.embedding.values
            self._topic[seq] = stored.key.topic_vector.values
            self._time[seq] = stored.key.timestamp
            user = stored.key.user_id
            self._user_code[seq] = self._user_codes.setdefault(user, len(self._user_codes))
            self._by_user.setdefault(user, []).append(seq)
            self._by_session.setdefault(stored.key.session_id, []).append(seq)
            self._pivots = None
            return seq

    def set_embedding(self, seq: int, vec: EmbeddingVector, bump: bool = True):
        self._check_dim(vec, "embedding")
        with self.lock.write():
            rec = self._records[seq]
            rec.embedding = EmbeddingVector.from_values(quantize(vec.values))
            if bump:
                rec.update_count += 1
            self._emb[seq] = rec.embedding.values
            self._pivots = None

    def set_weight(self, seq: int, weight: float):
        if not 0.0 <= weight <= 1.0:
            raise ContractViolation(f"weight must lie in [0, 1], got {weight}")
        with self.lock.write():
            self._records[seq].weight = weight

    def candidate_seqs(self, f: AxisFilter) -> np.ndarray:
        with self.lock.read():
            pools = []
            if f.user_id is not None:
                pools.append(self._by_user.get(f.user_id, []))
            if f.session_ids is not None:
                pools.append(sorted(s for sid in f.session_ids
                                    for s in self._by_session.get(sid, [])))
            if pools:
                base = min(pools, key=len)
                seqs = np.fromiter(base, dtype=np.int64, count=len(base))
            else:
                seqs = np.arange(len(self._records), dtype=np.int64)
            if seqs.size == 0:
                return seqs
            mask = np.ones(seqs.shape[0], dtype=bool)
            if f.user_id is not None:
                mask &= self._user_code[seqs] == self.user_code(f.user_id)
            if f.session_ids is not None and base is not pools[-1]:
                allowed = {s for sid in f.session_ids for s in self._by_session.get(sid, [])}
                mask &= np.fromiter((s in allowed for s in seqs.tolist()), dtype=bool,
                                    count=seqs.shape[0])
            if f.time_range is not None:
                t = self._time[seqs]
                mask &= (t >= f.time_range[0]) & (t <= f.time_range[1])
            return np.sort(seqs[mask])

    def filter(self, f: AxisFilter = AxisFilter()) -> list[MemoryRecord]:
        with self.lock.read():
            return [self._records[s] for s in self.candidate_seqs(f).tolist()]

    def nearest(self, query_vec: EmbeddingVector, candidates: AxisFilter = AxisFilter(),
                k: int = 1, index: Optional[str] = None) -> list[tuple[MemoryRecord, float]]:
        """Exact top-k by L2 among filtered records, ties to the lower seq."""
        self._check_dim(query_vec, "query")
        if k < 0:
            raise ContractViolation("k must be >= 0")
        with self.lock.read():
            seqs = self.candidate_seqs(candidates)
            if k == 0 or seqs.size == 0:
                return []
            if (index or self.index) == "pivot":
                ranked = self._pivot_index().search(query_vec.values, seqs, k)
            else:
                ranked = self._exhaustive(query_vec.values, seqs, k)
            return [(self._records[s], d) for d, s in ranked]

    def _exhaustive(self, q: np.ndarray, seqs: np.ndarray, k: int) -> list[tuple[float, int]]:
        diff = self._emb[seqs] - q
        approx = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        short = seqs[shortlist(approx, k)]
        exact = sorted((l2_distance(self._emb[s], q), s) for s in short.tolist())
        return exact[:k]

    def _pivot_index(self) -> "_PivotIndex":
        if self._pivots is None:
            self._pivots = _PivotIndex(self.embedding_matrix)
        return self._pivots

    # -- persistence
    def save(self, path) -> None:
        with self.lock.read(), open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{HEADER_PREFIX} {FORMAT_VERSION} dim={self.dim}\n")
            for rec in self._records:
                fh.write(_record_line(rec))
                fh.write("\n")

    @classmethod
    def load(cls, path, index: str = "exhaustive") -> "MemoryStore":
        with open(path, "r", encoding="utf-8", newline="\n") as fh:
            header = fh.readline().rstrip("\n")
            parts = header.split(" ")
            if len(parts) != 3 or parts[0] != HEADER_PREFIX or not parts[2].startswith("dim="):
                raise StoreVersionError(f"bad store header {header[:60]!r}", line=1)
            if parts[1] != FORMAT_VERSION:
                raise StoreVersionError(
                    f"store format {parts[1]!r} unsupported (expected {FORMAT_VERSION})", line=1)
            try:
                dim = int(parts[2][4:])
                store = cls(dim, index=index)
            except (ValueError, ContractViolation) as exc:
                raise StoreVersionError(f"bad dimension in header: {exc}", line=1) from None
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    raise FormatError("empty record line", line=lineno)
                try:
                    rec = _parse_record(line, dim)
                except (ValueError, KeyError, TypeError, ContractViolation) as exc:
                    raise FormatError(f"malformed record: {exc}", line=lineno) from None
                if rec.seq != store.size:
                    raise FormatError(f"expected seq {store.size}, found {rec.seq}", line=lineno)
                seq, rec.seq = rec.seq, None
                count = rec.update_count
                store.insert(rec)
                store._records[seq].update_count = count
        return store


_FIELDS = ("seq", "session_id", "user_id", "topic_label", "timestamp", "weight",
           "update_count", "payload_text", "answer_text", "embedding")


def _record_line(rec: MemoryRecord) -> str:
    row = {
        "seq": rec.seq,
        "session_id": rec.key.session_id,
        "user_id": rec.key.user_id,
        "topic_label": rec.key.topic_label,
        "timestamp": rec.key.timestamp,
        "weight": rec.weight,
        "update_count": rec.update_count,
        "payload_text": rec.payload_text,
        "answer_text": rec.answer_text,
        "embedding": ",".join(format(x, ".9g") for x in rec.embedding.values.tolist()),
    }
    return json.dumps(row, ensure_ascii=False, separators=(",", ":"))


def _parse_record(line: str, dim: int) -> MemoryRecord:
    row = json.loads(line)
    if not isinstance(row, dict):
        raise ValueError("record is not an object")
    missing = [f for f in _FIELDS if f not in row]
    if missing:
        raise KeyError(f"missing fields {missing}")
    values = np.array(row["embedding"].split(","), dtype=np.float32).astype(np.float64)
    if values.shape[0] != dim:
        raise ValueError(f"embedding has {values.shape[0]} values, header says dim={dim}")
    key = make_key(row["user_id"], row["topic_label"], int(row["timestamp"]),
                   row["session_id"], dim)
    return MemoryRecord(key, row["payload_text"], row["answer_text"],
                        EmbeddingVector.from_values(values), weight=float(row["weight"]),
                        seq=int(row["seq"]), update_count=int(row["update_count"]))


class _PivotIndex:
    """Exact pruning index: records are bucketed under their nearest pivot and
    the triangle inequality |d(q,p) - d(r,p)| <= d(q,r) skips whole rows."""

    def __init__(self, emb: np.ndarray):
        n = emb.shape[0]
        n_piv = max(1, int(np.sqrt(n)))
        self.emb = emb
        self.pivots = emb[np.linspace(0, n - 1, n_piv).astype(np.int64)] if n else emb[:0]
        if n:
            d = np.sqrt(((emb[:, None, :] - self.pivots[None, :, :]) ** 2).sum(-1)) \
                if n * n_piv * emb.shape[1] < 5e7 else self._chunked(emb)
            self.owner = d.argmin(axis=1)
            self.radius = d[np.arange(n), self.owner]
        else:
            self.owner = np.zeros(0, dtype=np.int64)
            self.radius = np.zeros(0)

    def _chunked(self, emb):
        out = np.empty((emb.shape[0], self.pivots.shape[0]))
        for p, piv in enumerate(self.pivots):
            diff = emb - piv
            out[:, p] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return out

    def search(self, q: np.ndarray, seqs: np.ndarray, k: int) -> list[tuple[float, int]]:
        diff = self.pivots - q
        dq = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        lower = np.abs(dq[self.owner[seqs]] - self.radius[seqs])
        order = np.argsort(lower, kind="stable")
        best: list[tuple[float, int]] = []  # max-heap via negation
        for i in order.tolist():
            if len(best) == k and lower[i] - 4 * SHORTLIST_MARGIN > -best[0][0]:
                break
            s = int(seqs[i])
            item = (-l2_distance(self.emb[s], q), -s)
            if len(best) < k:
                heapq.heappush(best, item)
            elif item > best[0]:
                heapq.heapreplace(best, item)
        return sorted((-d, -s) for d, s in best)


def iter_sessions(store: MemoryStore) -> Iterable[tuple[str, list[MemoryRecord]]]:
    for sid in store.sessions():
        yield sid, store.filter(AxisFilter(session_ids=frozenset([sid])))
