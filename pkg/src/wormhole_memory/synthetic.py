"""Seeded synthetic data: random stores for benchmarks, CoQA-format corpora for
offline tests and demos, and a planted corpus where the user/topic axes are
the only way to tell gold records from decoys."""

from __future__ import annotations

import json
import random

import numpy as np

from .embedder import EmbedderConfig, EmbeddingVector, embed
from .store import MemoryRecord, MemoryStore, make_key

SOURCES = ("mctest", "race", "cnn", "wikipedia", "gutenberg")
_SYLLABLES = ("ka", "lo", "mi", "ren", "do", "sa", "vel", "tor", "un", "bri", "zo", "pa",
              "gen", "lu", "fi", "mar", "quo", "xi", "hal", "ne")
_VERBS = ("found", "painted", "carried", "lost", "sold", "built", "hid", "cooked", "wrote",
          "borrowed", "fixed", "bought")
_GENERIC_QUESTIONS = ("why?", "what else?", "when?", "how?", "and then?", "who else?")
_GENERIC_ANSWERS = ("yes", "no", "because it rained", "later that day", "unknown",
                    "to help a friend", "twice")


def _word(rng: random.Random, n: int = 2) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(n))


def random_store(n: int, dim: int = 256, seed: int = 0, n_sessions: int = 50,
                 n_users: int = 20, n_topics: int = 8, max_time: int = 2000,
                 index: str = "exhaustive") -> MemoryStore:
    """``n`` records with Gaussian unit embeddings; identical for equal arguments."""
    gen = np.random.default_rng(seed)
    store = MemoryStore(dim, index=index)
    vecs = gen.standard_normal((n, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    sessions = gen.integers(0, n_sessions, n)
    users = gen.integers(0, n_users, n)
    topics = gen.integers(0, n_topics, n)
    times = gen.integers(0, max_time, n)
    for i in range(n):
        key = make_key(f"u{users[i]}", f"topic {topics[i]}", int(times[i]),
                       f"s{sessions[i]}", dim)
        store.insert(MemoryRecord(key, f"record {i}", f"answer {i}",
                                  EmbeddingVector.from_values(vecs[i])))
    return store


def synthetic_coqa(n_dialogues: int = 10, seed: int = 0, min_turns: int = 8,
                   max_turns: int = 16, generic_rate: float = 0.1) -> dict:
    """A corpus in the published CoQA serialization.

    Each story has its own cast and props; most questions name them, a few
    are generic follow-ups ("why?") that no retriever can place.
    """
    rng = random.Random(seed)
    data = []
    for d in range(n_dialogues):
        names = [_word(rng, 2).capitalize() for _ in range(4)]
        things = [_word(rng, 3) for _ in range(6)]
        places = [_word(rng, 2) + " " + rng.choice(("park", "river", "market", "school"))
                  for _ in range(3)]
        questions, answers, story = [], [], []
        for t in range(1, rng.randint(min_turns, max_turns) + 1):
            if rng.random() < generic_rate:
                q, a = rng.choice(_GENERIC_QUESTIONS), rng.choice(_GENERIC_ANSWERS)
            else:
                name, thing, verb = rng.choice(names), rng.choice(things), rng.choice(_VERBS)
                place = rng.choice(places)
                form = rng.randrange(3)
                if form == 0:
                    q, a = f"What did {name} {verb} near the {place}?", f"the {thing}"
                elif form == 1:
                    q, a = f"Who {verb} the {thing}?", name
                else:
                    q, a = f"Where did {name} take the {thing}?", f"to the {place}"
                story.append(f"{name} {verb} the {thing} at the {place}.")
            questions.append({"input_text": q, "turn_id": t})
            answers.append({"input_text": a, "span_text": a, "span_start": -1,
                            "span_end": -1, "turn_id": t})
        data.append({"id": f"d{seed}x{d:04d}", "source": SOURCES[d % len(SOURCES)],
                     "filename": f"synthetic_{d}.txt", "story": " ".join(story),
                     "questions": questions, "answers": answers})
    return {"version": "1.0", "data": data}


def write_synthetic_coqa(path, **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(synthetic_coqa(**kwargs), fh, ensure_ascii=False, indent=1)


def planted_store(n_sessions: int = 6, probes_per_session: int = 5, seed: int = 0,
                  dim: int = 256) -> MemoryStore:
    """Sessions mixing two speakers on two topics.

    For every gold turn a decoy from the other speaker repeats the gold
    question verbatim (so it is nearer by pure L2) under the other topic.
    Only the user/topic penalty can rank the gold record first.
    """
    rng = random.Random(seed)
    emb = EmbedderConfig(dim)
    store = MemoryStore(dim)
    for s in range(n_sessions):
        sid = f"p{s}"
        gold_user, decoy_user = f"alice{s}", f"bob{s}"
        gold_topic, decoy_topic = SOURCES[s % 5], SOURCES[(s + 2) % 5]
        t = 0
        for _ in range(probes_per_session):
            thing, name = _word(rng, 3), _word(rng, 2)
            question = f"where did {name} hide the {thing}"
            answer = f"under the {_word(rng, 2)} stone"
            t += 1
            payload = f"{question} {answer}"
            store.insert(MemoryRecord(make_key(gold_user, gold_topic, t, sid, dim),
                                      payload, answer, embed(payload, emb)))
            t += 1
            store.insert(MemoryRecord(make_key(decoy_user, decoy_topic, t, sid, dim),
                                      question, "", embed(question, emb)))
    return store
