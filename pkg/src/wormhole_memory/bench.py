"""Latency benchmark for top-k retrieval over a seeded random store."""

from __future__ import annotations

import hashlib
import time

import numpy as np

from .embedder import EmbeddingVector
from .errors import ValidationError
from .retrieval import Query, RetrievalParams, top_k
from .store import AxisFilter
from .synthetic import random_store


def corpus_digest(store) -> str:
    h = hashlib.sha256()
    h.update(store.embedding_matrix.tobytes())
    h.update(store.timestamps.tobytes())
    return h.hexdigest()[:16]


def run_bench(n: int, dim: int = 256, queries: int = 100, k: int = 5, seed: int = 0,
              params: RetrievalParams = RetrievalParams(), index: str = "exhaustive") -> dict:
    if n < 1 or queries < 1:
        raise ValidationError("bench needs n >= 1 and queries >= 1")
    store = random_store(n, dim, seed, index=index)
    gen = np.random.default_rng(seed + 1)
    qv = gen.standard_normal((queries, dim))
    qv /= np.linalg.norm(qv, axis=1, keepdims=True)
    topics = [store.get(int(i)).key.topic_vector for i in gen.integers(0, n, queries)]
    users = gen.integers(0, 20, queries)
    times = gen.integers(0, 2000, queries)
    latencies = []
    for i in range(queries):
        q = Query("bench", f"u{users[i]}", "", "bench", EmbeddingVector.from_values(qv[i]),
                  topics[i], int(times[i]), k)
        t0 = time.perf_counter()
        top_k(q, store, params, AxisFilter())
        latencies.append((time.perf_counter() - t0) * 1000.0)
    lat = np.array(latencies)
    return {
        "n": n, "dim": dim, "queries": queries, "k": k, "seed": seed, "index": index,
        "corpus_digest": corpus_digest(store),
        "p50_ms": float(np.percentile(lat, 50)),
        "p95_ms": float(np.percentile(lat, 95)),
        "mean_ms": float(lat.mean()),
        "throughput_qps": float(queries / (lat.sum() / 1000.0)) if lat.sum() > 0 else float("inf"),
    }
