"""Memory-barrier harness.

A run replays a line-oriented script against a store. Every query passes an
access rule chosen by the barrier mode:

* ``isolated``: only the origin session is readable (the session-isolated
  baseline, which rejects every cross-dialogue request);
* ``gated``: other sessions become readable after an ``open <session>`` command;
* ``open``: no restriction.

Script grammar (one command per line, ``#`` starts a comment)::

    open <session>
    close <session>
    query <origin> targets=<s1,s2|all> user=<id> topic="..." text="..." [k=<n>]
    say <session> user=<id> topic="..." text="..." answer="..." [t=<turn>]

Every query produces one access event in the run log, granted or denied.
"""

from __future__ import annotations

import enum
import hashlib
import json
import shlex
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .dynamics import DynamicsParams, apply_update
from .embedder import EmbedderConfig, embed, l2_norm
from .errors import FormatError, UnknownSession
from .merge import ContextState, MergeParams, adaptive_gate, cot_integrate, residual_merge
from .retrieval import Query, RetrievalParams, RetrievalResult, build_query, top_k
from .store import AxisFilter, MemoryRecord, MemoryStore, make_key

ALL = "all"


class BarrierMode(str, enum.Enum):
    ISOLATED = "isolated"
    GATED = "gated"
    OPEN = "open"


@dataclass
class SessionRegistry:
    sessions: set = field(default_factory=set)
    opened: set = field(default_factory=set)

    def register(self, session_id: str) -> None:
        self.sessions.add(session_id)


def open_session(reg: SessionRegistry, session_id: str) -> SessionRegistry:
    if session_id not in reg.sessions:
        raise UnknownSession(session_id)
    reg.opened.add(session_id)
    return reg


def close_session(reg: SessionRegistry, session_id: str) -> SessionRegistry:
    if session_id not in reg.sessions:
        raise UnknownSession(session_id)
    reg.opened.discard(session_id)
    return reg


@dataclass(frozen=True)
class Decision:
    granted: bool
    scope: Optional[AxisFilter] = None
    reason: str = ""


def authorize(reg: SessionRegistry, mode: BarrierMode, origin: str,
              targets: Iterable[str]) -> Decision:
    mode = BarrierMode(mode)
    targets = frozenset(targets)
    if mode is BarrierMode.ISOLATED:
        foreign = targets - {origin}
        if foreign:
            return Decision(False, reason="isolation barrier: cross-dialogue retrieval rejected "
                                          f"for {','.join(sorted(foreign))}")
    elif mode is BarrierMode.GATED:
        closed = targets - {origin} - reg.opened
        if closed:
            return Decision(False, reason=f"sessions not opened: {','.join(sorted(closed))}")
    return Decision(True, scope=AxisFilter(session_ids=targets))


@dataclass(frozen=True)
class AccessEvent:
    event_seq: int
    origin_session: str
    target_sessions: frozenset
    decision: str  # "Granted" | "Denied"
    reason: str
    query_digest: str


# -- script events

@dataclass(frozen=True)
class OpenCmd:
    session: str
    line: int = 0


@dataclass(frozen=True)
class CloseCmd:
    session: str
    line: int = 0


@dataclass(frozen=True)
class QueryCmd:
    origin: str
    targets: Union[tuple, str]  # tuple of session ids, or ALL
    user: str
    text: str
    topic: str = ""
    k: Optional[int] = None
    line: int = 0


@dataclass(frozen=True)
class SayCmd:
    session: str
    user: str
    text: str
    topic: str = ""
    answer: str = ""
    t: Optional[int] = None
    line: int = 0


Event = Union[OpenCmd, CloseCmd, QueryCmd, SayCmd]


def _kv(tokens: list[str], lineno: int, allowed: set, required: set) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise FormatError(f"expected key=value, got {tok!r}", line=lineno)
        key, value = tok.split("=", 1)
        if key not in allowed:
            raise FormatError(f"unknown field {key!r}", line=lineno)
        if key in out:
            raise FormatError(f"duplicate field {key!r}", line=lineno)
        out[key] = value
    missing = required - out.keys()
    if missing:
        raise FormatError(f"missing field(s) {', '.join(sorted(missing))}", line=lineno)
    return out


def _int_field(value: str, name: str, lineno: int, minimum: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise FormatError(f"{name} must be an integer, got {value!r}", line=lineno) from None
    if n < minimum:
        raise FormatError(f"{name} must be >= {minimum}", line=lineno)
    return n


def parse_script_line(line: str, lineno: int) -> Optional[Event]:
    try:
        tokens = shlex.split(line, comments=True)
    except ValueError as exc:
        raise FormatError(str(exc), line=lineno) from None
    if not tokens:
        return None
    cmd, args = tokens[0], tokens[1:]
    if cmd in ("open", "close"):
        if len(args) != 1:
            raise FormatError(f"{cmd} takes exactly one session id", line=lineno)
        return (OpenCmd if cmd == "open" else CloseCmd)(args[0], lineno)
    if cmd == "query":
        if not args or "=" in args[0]:
            raise FormatError("query needs an origin session", line=lineno)
        kv = _kv(args[1:], lineno, {"targets", "user", "topic", "text", "k"},
                 {"targets", "user", "text"})
        targets = ALL if kv["targets"] == ALL else tuple(
            t for t in kv["targets"].split(",") if t)
        k = _int_field(kv["k"], "k", lineno, 1) if "k" in kv else None
        if not kv["text"]:
            raise FormatError("query text must be non-empty", line=lineno)
        if not kv["user"]:
            raise FormatError("user must be non-empty", line=lineno)
        return QueryCmd(args[0], targets, kv["user"], kv["text"], kv.get("topic", ""), k, lineno)
    if cmd == "say":
        if not args or "=" in args[0]:
            raise FormatError("say needs a session id", line=lineno)
        kv = _kv(args[1:], lineno, {"user", "topic", "text", "answer", "t"}, {"user", "text"})
        t = _int_field(kv["t"], "t", lineno, 0) if "t" in kv else None
        if not kv["user"]:
            raise FormatError("user must be non-empty", line=lineno)
        return SayCmd(args[0], kv["user"], kv["text"], kv.get("topic", ""),
                      kv.get("answer", ""), t, lineno)
    raise FormatError(f"unknown command {cmd!r}", line=lineno)


def parse_script(text: str) -> list[Event]:
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        ev = parse_script_line(line, lineno)
        if ev is not None:
            events.append(ev)
    return events


def load_script(path) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        return parse_script(fh.read())


# -- run

@dataclass(frozen=True)
class HarnessParams:
    embedder: EmbedderConfig = EmbedderConfig()
    dynamics: DynamicsParams = DynamicsParams()
    retrieval: RetrievalParams = RetrievalParams()
    merge: MergeParams = MergeParams()
    top_k: int = 5


@dataclass
class RunLog:
    header: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)
    access_events: list = field(default_factory=list)
    # per access event: the retrieval results (empty when denied)
    results: list = field(default_factory=list)

    def lines(self) -> list[str]:
        rows = ([self.header] if self.header else []) + self.entries
        return [json.dumps(r, ensure_ascii=False, separators=(",", ":")) for r in rows]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def payload_for(text: str, answer: str) -> str:
    return f"{text} {answer}".strip() if answer else text


def query_digest(q: Query) -> str:
    blob = json.dumps([q.origin_session, q.user_id, q.topic_text, q.query_text, q.k,
                       q.timestamp], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _result_row(r: RetrievalResult) -> dict:
    rec = r.record
    return {"rank": r.rank, "session_id": rec.key.session_id, "seq": rec.seq,
            "l2": r.l2, "h": r.h, "d": r.d, "weight": rec.weight,
            "answer_text": rec.answer_text}


def run_script(store: MemoryStore, script: list[Event], mode: BarrierMode,
               params: HarnessParams = HarnessParams(), seed: int = 0,
               config_digest: str = "") -> RunLog:
    """Replay ``script`` in order and return the run log.

    The harness itself draws no random numbers; ``seed`` and ``config_digest``
    are recorded in the log header so runs can be matched up.
    """
    mode = BarrierMode(mode)
    log = RunLog(header={"type": "run", "mode": mode.value, "seed": seed,
                         "config_digest": config_digest} if config_digest else {})
    if not script:
        return log
    reg = SessionRegistry(set(store.sessions()))
    clock: dict[str, int] = {}
    for rec in store:
        sid = rec.key.session_id
        clock[sid] = max(clock.get(sid, 0), rec.key.timestamp)
    context: dict[str, ContextState] = {}

    for ev in script:
        if isinstance(ev, (OpenCmd, CloseCmd)):
            try:
                (open_session if isinstance(ev, OpenCmd) else close_session)(reg, ev.session)
            except UnknownSession as exc:
                raise UnknownSession(exc.session_id, line=ev.line) from None
            log.entries.append({"type": "open" if isinstance(ev, OpenCmd) else "close",
                                "line": ev.line, "session": ev.session})
        elif isinstance(ev, SayCmd):
            reg.register(ev.session)
            t = ev.t if ev.t is not None else clock.get(ev.session, 0) + 1
            clock[ev.session] = max(clock.get(ev.session, 0), t)
            payload = payload_for(ev.text, ev.answer)
            rec = MemoryRecord(make_key(ev.user, ev.topic, t, ev.session, store.dim),
                               payload, ev.answer, embed(payload, params.embedder))
            slot = AxisFilter(session_ids=frozenset([ev.session]), time_range=(t, t))
            out = apply_update(store, slot, rec, params.dynamics)
            log.entries.append({"type": "update", "line": ev.line, "session": ev.session,
                                "t": t, "outcome": out.kind, "seq": out.seq,
                                "surprise": out.surprise, "inserted_seq": out.inserted_seq})
        elif isinstance(ev, QueryCmd):
            reg.register(ev.origin)
            targets = sorted(reg.sessions) if ev.targets == ALL else sorted(set(ev.targets))
            q = build_query(ev.user, ev.topic, ev.text, ev.origin, clock.get(ev.origin, 0),
                            ev.k or params.top_k, params.embedder)
            decision = authorize(reg, mode, ev.origin, targets)
            event = AccessEvent(len(log.access_events), ev.origin, frozenset(targets),
                                "Granted" if decision.granted else "Denied",
                                decision.reason, query_digest(q))
            results: list[RetrievalResult] = []
            tags = []
            entry = {"type": "access", "event_seq": event.event_seq, "line": ev.line,
                     "origin": ev.origin, "targets": targets, "decision": event.decision,
                     "reason": event.reason, "query_digest": event.query_digest,
                     "timestamp": q.timestamp, "k": q.k}
            if decision.granted:
                results = top_k(q, store, params.retrieval, decision.scope)
                tags = cot_integrate(results)
                h = context.get(ev.origin) or ContextState.zeros(store.dim)
                if results:
                    best = results[0]
                    gate = adaptive_gate(best.d) if params.merge.adaptive_gate else None
                    h = residual_merge(h, best.record.embedding, params.merge, gate)
                context[ev.origin] = h
                entry["context_norm"] = l2_norm(h.values)
            entry["results"] = [_result_row(r) for r in results]
            entry["cot"] = [t.to_dict() for t in tags]
            log.access_events.append(event)
            log.results.append(results)
            log.entries.append(entry)
        else:
            raise FormatError(f"unsupported event {ev!r}")
    return log
