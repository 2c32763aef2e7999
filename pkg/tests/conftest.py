import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wormhole_memory.coqa import parse_coqa_data, populate  # noqa: E402
from wormhole_memory.embedder import EmbedderConfig  # noqa: E402
from wormhole_memory.store import MemoryStore  # noqa: E402
from wormhole_memory.synthetic import synthetic_coqa  # noqa: E402


@pytest.fixture
def coqa_doc():
    return synthetic_coqa(n_dialogues=10, seed=7)


@pytest.fixture
def coqa_file(tmp_path, coqa_doc):
    path = tmp_path / "coqa-dev.json"
    path.write_text(json.dumps(coqa_doc), encoding="utf-8")
    return path


@pytest.fixture
def coqa_store(coqa_doc):
    store = MemoryStore(256)
    populate(store, parse_coqa_data(coqa_doc).dialogues, EmbedderConfig(256))
    return store


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
