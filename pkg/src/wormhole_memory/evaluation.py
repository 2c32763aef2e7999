"""Cross-dialogue evaluation: probe construction, the six report metrics,
and a driver that runs probes through the barrier harness.

Metric definitions (macro-averaged over probes):

* precision = hits / min(k, returned), 0 for an empty result list
* recall = hits / |relevant|
* f1 = 2PR / (P + R) on the averaged P and R
* memory utilization = distinct records returned by any probe / store size
* accuracy = top-1 answer equals the gold answer after normalization
* bleu = mean sentence BLEU-4 of top-1 answer against the gold answer
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .barrier import BarrierMode, CloseCmd, HarnessParams, OpenCmd, QueryCmd, RunLog, run_script
from .embedder import EmbedderConfig
from .errors import ValidationError
from .retrieval import Query, build_query
from .store import MemoryRecord, MemoryStore

CSV_HEADER = ("run", "precision", "recall", "f1", "memory_utilization", "accuracy", "bleu")
STRATEGIES = ("strict", "dialogue")

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = re.compile(r"[^\w\s]|_")


def normalize_answer(text: str) -> str:
    text = _PUNCT.sub(" ", text.lower())
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


@dataclass(frozen=True)
class EvalQuery:
    query: Query
    gold_session: str
    gold_seq: int
    gold_answer: str
    relevant_set: frozenset

    def __post_init__(self):
        if (self.gold_session, self.gold_seq) not in self.relevant_set:
            raise ValidationError("gold record must be in the relevant set")


def question_of(rec: MemoryRecord) -> str:
    suffix = " " + rec.answer_text
    if rec.answer_text and rec.payload_text.endswith(suffix):
        return rec.payload_text[: -len(suffix)]
    return rec.payload_text


def build_eval_queries(store: MemoryStore, strategy: str = "strict", seed: int = 0,
                       sample_fraction: float = 1.0, k: int = 5,
                       embedder: Optional[EmbedderConfig] = None) -> list[EvalQuery]:
    """One probe per sampled (session, turn) slot, issued from another session.

    The probe carries the gold record's user, topic label and question text;
    its timestamp is the origin session's current logical time. The gold
    record is the oldest record occupying the slot.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    if not 0.0 < sample_fraction <= 1.0:
        raise ValidationError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    embedder = embedder or EmbedderConfig(store.dim)
    sessions = store.sessions()
    if len(sessions) < 2:
        raise ValidationError("cross-dialogue evaluation needs at least 2 dialogues")
    by_session: dict[str, list[MemoryRecord]] = {s: [] for s in sessions}
    for rec in store:
        by_session[rec.key.session_id].append(rec)
    clock = {s: max(r.key.timestamp for r in recs) for s, recs in by_session.items()}

    slots = []
    for sid in sessions:
        seen = set()
        for rec in by_session[sid]:
            if rec.key.timestamp not in seen:
                seen.add(rec.key.timestamp)
                slots.append(rec)
    rng = random.Random(seed)
    if sample_fraction < 1.0:
        n = max(1, round(sample_fraction * len(slots)))
        slots = [slots[i] for i in sorted(rng.sample(range(len(slots)), n))]

    queries = []
    for gold in slots:
        sid = gold.key.session_id
        origin = rng.choice([s for s in sessions if s != sid])
        if strategy == "strict":
            relevant = frozenset([(sid, gold.seq)])
        else:
            relevant = frozenset((sid, r.seq) for r in by_session[sid])
        q = build_query(gold.key.user_id, gold.key.topic_label, question_of(gold) or "?",
                        origin, clock[origin], k, embedder)
        queries.append(EvalQuery(q, sid, gold.seq, gold.answer_text, relevant))
    return queries


def probe_script(queries: Sequence[EvalQuery], mode: BarrierMode) -> list:
    """Harness events for the probes; gated runs open the target before asking."""
    events = []
    for eq in queries:
        q = eq.query
        cmd = QueryCmd(q.origin_session, (eq.gold_session,), q.user_id, q.query_text,
                       q.topic_text, q.k)
        if BarrierMode(mode) is BarrierMode.GATED:
            events += [OpenCmd(eq.gold_session), cmd, CloseCmd(eq.gold_session)]
        else:
            events.append(cmd)
    return events


# -- metrics

def precision_recall_f1(queries: Sequence[EvalQuery], results: Sequence[Sequence[tuple]],
                        k: int) -> tuple[float, float, float]:
    """``results[i]`` is the ranked list of (session_id, seq) refs for probe i."""
    if not queries:
        return 0.0, 0.0, 0.0
    if len(results) != len(queries):
        raise ValidationError("one result list per query is required")
    p_sum = r_sum = 0.0
    for eq, refs in zip(queries, results):
        if len(refs) > k:
            raise ValidationError(f"result list longer than k={k}")
        hits = len(set(refs) & eq.relevant_set)
        p_sum += hits / min(k, len(refs)) if refs else 0.0
        r_sum += hits / len(eq.relevant_set)
    p = p_sum / len(queries)
    r = r_sum / len(queries)
    return p, r, f1_score(p, r)


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def memory_utilization(store_size: int, results: Sequence[Sequence[tuple]]) -> float:
    if store_size <= 0:
        raise ValidationError("memory utilization is undefined for an empty store")
    touched = {ref for refs in results for ref in refs}
    return len(touched) / store_size


def accuracy(queries: Sequence[EvalQuery], top1_answers: Sequence[Optional[str]]) -> float:
    if not queries:
        return 0.0
    correct = sum(1 for eq, ans in zip(queries, top1_answers)
                  if ans is not None and normalize_answer(ans) == normalize_answer(eq.gold_answer))
    return correct / len(queries)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU-4 with add-one smoothing on the 2..4-gram precisions."""
    cand = normalize_answer(candidate).split()
    refs = [normalize_answer(r).split() for r in references]
    if not cand or not refs:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        counts = _ngrams(cand, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, c in _ngrams(ref, n).items():
                max_ref[gram] = max(max_ref[gram], c)
        clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            if clipped == 0:
                return 0.0
            log_p += math.log(clipped / total)
        else:
            log_p += math.log((clipped + 1) / (total + 1))
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / max_n)


def corpus_bleu(queries: Sequence[EvalQuery], top1_answers: Sequence[Optional[str]]) -> float:
    if not queries:
        return 0.0
    return sum(bleu(ans, [eq.gold_answer]) if ans is not None else 0.0
               for eq, ans in zip(queries, top1_answers)) / len(queries)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    memory_utilization: float
    accuracy: float
    bleu: float
    n_queries: int
    config_digest: str
    mode: str
    seed: int = 0

    @property
    def run_label(self) -> str:
        return f"{self.config_digest}-s{self.seed}"

    def metrics(self) -> dict:
        return {m: getattr(self, m) for m in CSV_HEADER[1:]}

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def csv_row(self, run: Optional[str] = None) -> list:
        return [run if run is not None else self.run_label] + [
            format(v, ".6f") for v in self.metrics().values()]


def reports_to_csv(reports: Sequence[EvalReport], runs: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, rep in enumerate(reports):
        w.writerow(rep.csv_row(runs[i] if runs else None))
    return buf.getvalue()


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return "".join(json.dumps(r.as_dict(), sort_keys=True, separators=(",", ":")) + "\n"
                   for r in reports)


def score_log(queries: Sequence[EvalQuery], log: RunLog, store_size: int, k: int,
              config_digest: str, mode: str, seed: int) -> EvalReport:
    if len(log.results) != len(queries):
        raise ValidationError("run log does not align with the probe list")
    refs = [[r.record.ref for r in res] for res in log.results]
    top1 = [res[0].record.answer_text if res else None for res in log.results]
    p, r, f1 = precision_recall_f1(queries, refs, k)
    return EvalReport(p, r, f1, memory_utilization(store_size, refs), accuracy(queries, top1),
                      corpus_bleu(queries, top1), len(queries), config_digest,
                      BarrierMode(mode).value, seed)


def run_eval(store: MemoryStore, mode: BarrierMode, params: HarnessParams,
             strategy: str = "strict", seed: int = 0, sample_fraction: float = 1.0,
             config_digest: str = "") -> tuple[EvalReport, RunLog, list[EvalQuery]]:
    queries = build_eval_queries(store, strategy, seed, sample_fraction, params.top_k,
                                 params.embedder)
    size = store.size
    log = run_script(store, probe_script(queries, mode), mode, params, seed, config_digest)
    report = score_log(queries, log, size, params.top_k, config_digest, mode, seed)
    return report, log, queries
