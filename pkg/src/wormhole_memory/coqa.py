"""CoQA loader and store population (one story = one dialogue/session)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .dynamics import DynamicsParams, apply_update
from .embedder import EmbedderConfig, embed
from .errors import ConfigurationError, FormatError
from .barrier import payload_for
from .store import AxisFilter, MemoryRecord, MemoryStore, make_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Turn:
    turn_id: int
    question_text: str
    answer_text: str
    span_text: str = ""


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    source: str
    story_text: str
    turns: tuple


@dataclass
class ParseResult:
    dialogues: list
    skipped: int = 0
    errors: list = field(default_factory=list)

    @property
    def n_dialogues(self) -> int:
        return len(self.dialogues)

    @property
    def n_turns(self) -> int:
        return sum(len(d.turns) for d in self.dialogues)


def _parse_item(item) -> Dialogue:
    if not isinstance(item, dict):
        raise ValueError("item is not an object")
    did = item.get("id")
    if not did:
        raise ValueError("missing id")
    questions = item.get("questions")
    answers = item.get("answers")
    if not isinstance(questions, list) or not isinstance(answers, list):
        raise ValueError(f"{did}: missing questions/answers arrays")
    by_turn = {}
    for a in answers:
        by_turn[int(a["turn_id"])] = a
    turns = []
    for q in sorted(questions, key=lambda q: int(q["turn_id"])):
        tid = int(q["turn_id"])
        if tid not in by_turn:
            raise ValueError(f"{did}: question turn {tid} has no answer")
        text = q.get("input_text", "")
        if not text:
            raise ValueError(f"{did}: empty question at turn {tid}")
        a = by_turn[tid]
        turns.append(Turn(tid, text, a.get("input_text", ""), a.get("span_text", "")))
    ids = [t.turn_id for t in turns]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError(f"{did}: turn ids are not contiguous from 1")
    return Dialogue(did, item.get("source", ""), item.get("story", ""), tuple(turns))


def parse_coqa_data(doc) -> ParseResult:
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise FormatError("CoQA file has no top-level 'data' array")
    out = ParseResult([])
    for i, item in enumerate(doc["data"]):
        try:
            out.dialogues.append(_parse_item(item))
        except (ValueError, KeyError, TypeError) as exc:
            out.skipped += 1
            out.errors.append(f"item {i}: {exc}")
    return out


def parse_coqa(path) -> ParseResult:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return parse_coqa_data(doc)


def user_per_dialogue(dialogue: Dialogue, turn: Turn) -> str:
    return f"user-{dialogue.dialogue_id}"


def single_user(dialogue: Dialogue, turn: Turn) -> str:
    return "user-0"


USER_STRATEGIES: dict[str, Callable[[Dialogue, Turn], str]] = {
    "per_dialogue": user_per_dialogue,
    "single": single_user,
}


@dataclass
class IngestReport:
    records_inserted: int = 0
    merged: int = 0
    decayed: int = 0
    dialogues: int = 0
    turns: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def turn_record(dialogue: Dialogue, turn: Turn, user_id: str,
                embedder: EmbedderConfig) -> MemoryRecord:
    payload = payload_for(turn.question_text, turn.answer_text)
    key = make_key(user_id, dialogue.source, turn.turn_id, dialogue.dialogue_id, embedder.dim)
    return MemoryRecord(key, payload, turn.answer_text, embed(payload, embedder))


def populate(store: MemoryStore, dialogues, embedder: EmbedderConfig = EmbedderConfig(),
             dynamics_params: DynamicsParams = DynamicsParams(),
             user_strategy: str | Callable = "per_dialogue") -> IngestReport:
    """Route every turn through the surprise gate.

    A turn competes only with records already occupying its own
    (dialogue, turn) slot, so a first ingest inserts every turn and a repeat
    ingest exercises the merge and decay branches.
    """
    if store.dim != embedder.dim:
        raise ConfigurationError(f"store dim {store.dim} != embedder dim {embedder.dim}")
    user_of = USER_STRATEGIES[user_strategy] if isinstance(user_strategy, str) else user_strategy
    report = IngestReport()
    with store.lock.write():
        for dlg in dialogues:
            report.dialogues += 1
            for turn in dlg.turns:
                report.turns += 1
                rec = turn_record(dlg, turn, user_of(dlg, turn), embedder)
                slot = AxisFilter(session_ids=frozenset([dlg.dialogue_id]),
                                  time_range=(turn.turn_id, turn.turn_id))
                out = apply_update(store, slot, rec, dynamics_params)
                if out.kind == "merged":
                    report.merged += 1
                else:
                    report.records_inserted += 1
                    if out.kind == "decayed":
                        report.decayed += 1
    return report


def check_expectations(parsed: ParseResult, expect_dialogues: Optional[int],
                       expect_turns: Optional[int]) -> list[str]:
    """Mismatch warnings between observed and expected corpus counts."""
    warnings = []
    if expect_dialogues is not None and parsed.n_dialogues != expect_dialogues:
        warnings.append(f"expected {expect_dialogues} dialogues, observed {parsed.n_dialogues}")
    if expect_turns is not None and parsed.n_turns != expect_turns:
        warnings.append(f"expected {expect_turns} turns, observed {parsed.n_turns}")
    for w in warnings:
        log.warning(w)
    return warnings
