import csv
import io
import json
import threading
import time

import pytest

from wormhole_memory.bench import run_bench
from wormhole_memory.cli import main
from wormhole_memory.config import RunConfig, load_config, parse_config_text
from wormhole_memory.errors import ConfigurationError, ValidationError
from wormhole_memory.store import RWLock
from wormhole_memory.sweep import best_row, parse_grid, run_sweep, sweep_csv
from wormhole_memory.synthetic import planted_store

HEADER = "run,precision,recall,f1,memory_utilization,accuracy,bleu"


def test_config_defaults():
    cfg = RunConfig()
    assert (cfg.dim, cfg.alpha_momentum, cfg.lambda_decay, cfg.tau_surprise) == (256, 0.3, 0.01, 0.5)
    assert (cfg.beta_hierarchy, cfg.top_k, cfg.barrier_mode) == (0.5, 5, "gated")
    assert cfg.retrieval.h_max == 1.75


def test_config_range_and_unknown_keys(tmp_path):
    with pytest.raises(ConfigurationError, match="alpha_momentum"):
        RunConfig(alpha_momentum=1.5)
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_config_text("betta=0.2\n")
    with pytest.raises(ConfigurationError):
        RunConfig(barrier_mode="porous")
    p = tmp_path / "c.cfg"
    p.write_text("# tuned\nbeta_hierarchy = 0.75\nseed=4\n")
    cfg = load_config(p, {"top_k": 3, "seed": None})
    assert (cfg.beta_hierarchy, cfg.seed, cfg.top_k) == (0.75, 4, 3)


def test_config_digest_stable_and_sensitive():
    assert RunConfig().config_digest == RunConfig().config_digest
    assert len(RunConfig().config_digest) == 16
    assert RunConfig(beta_hierarchy=0.25).config_digest != RunConfig().config_digest
    assert RunConfig().replace(beta_hierarchy="0.25") == RunConfig(beta_hierarchy=0.25)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ingested(tmp_path, coqa_file, capsys):
    store = tmp_path / "mem.wmm"
    code, out, _ = run_cli(capsys, "ingest", "--input", str(coqa_file), "--store", str(store))
    assert code == 0
    return store, json.loads(out)


def test_cli_ingest_reports_counts(ingested, coqa_doc, capsys, coqa_file, tmp_path):
    _, summary = ingested
    assert summary["dialogues"] == 10
    assert summary["turns"] == sum(len(d["questions"]) for d in coqa_doc["data"])
    assert summary["records_inserted"] == summary["turns"]
    assert any("500" in w for w in summary["warnings"])
    code, _, _ = run_cli(capsys, "ingest", "--input", str(coqa_file), "--strict",
                         "--store", str(tmp_path / "x.wmm"))
    assert code == 1


def test_cli_eval_csv_and_json(ingested, tmp_path, capsys):
    store, _ = ingested
    code, out, _ = run_cli(capsys, "eval", "--store", str(store), "--mode", "gated")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert ",".join(rows[0]) == HEADER and len(rows) == 2
    assert all(0.0 <= float(v) <= 1.0 for v in rows[1][1:])
    out_path = tmp_path / "r.json"
    code, _, _ = run_cli(capsys, "eval", "--store", str(store), "--format", "json",
                         "--out", str(out_path), "--log", str(tmp_path / "run.ndjson"))
    assert code == 0
    lines = out_path.read_text().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert {"precision", "recall", "f1", "memory_utilization", "accuracy", "bleu"} <= set(doc)
    assert (tmp_path / "run.ndjson").read_text().startswith('{"')


def test_cli_simulate_and_query(ingested, tmp_path, capsys):
    store, _ = ingested
    script = tmp_path / "s.txt"
    script.write_text("# demo\nopen d7x0001\n"
                      "query d7x0000 targets=d7x0001 user=user-d7x0001 topic=race text='who?'\n"
                      "close d7x0001\n")
    code, out, _ = run_cli(capsys, "simulate", "--store", str(store), "--script", str(script),
                           "--log", str(tmp_path / "sim.ndjson"))
    assert code == 0 and json.loads(out)["granted"] == 1
    code, out, _ = run_cli(capsys, "query", "--store", str(store), "--origin", "d7x0000",
                           "--targets", "d7x0001", "--user", "user-d7x0001", "--text", "who",
                           "--open", "d7x0001", "--k", "2")
    entry = json.loads(out)
    assert code == 0 and entry["decision"] == "Granted" and len(entry["results"]) == 2


def test_cli_exit_codes(tmp_path, capsys):
    assert run_cli(capsys, "eval", "--store", str(tmp_path / "missing.wmm"))[0] == 3
    bad = tmp_path / "bad.wmm"
    bad.write_text("NOTASTORE\n")
    code, _, err = run_cli(capsys, "eval", "--store", str(bad))
    assert code == 2 and "line 1" in err
    cfg = tmp_path / "c.cfg"
    cfg.write_text("alpha_momentum=1.5\n")
    assert run_cli(capsys, "bench", "--config", str(cfg), "--n", "1", "--queries", "1")[0] == 1
    script = tmp_path / "s.txt"
    script.write_text("open\n")
    assert run_cli(capsys, "simulate", "--script", str(script))[0] == 2


def test_bench_tiny_and_deterministic(capsys):
    code, out, _ = run_cli(capsys, "bench", "--n", "1", "--queries", "1", "--dim", "8")
    rep = json.loads(out)
    assert code == 0 and rep["n"] == 1 and rep["p95_ms"] >= 0
    a = run_bench(200, dim=16, queries=3, seed=5)
    b = run_bench(200, dim=16, queries=3, seed=5)
    assert a["corpus_digest"] == b["corpus_digest"]
    assert run_bench(200, dim=16, queries=3, seed=6)["corpus_digest"] != a["corpus_digest"]


def test_sweep_grid_basics(coqa_store):
    assert parse_grid("beta_hierarchy=0,0.5;w_user=1") == \
        {"beta_hierarchy": ["0", "0.5"], "w_user": ["1"]}
    with pytest.raises(ConfigurationError):
        parse_grid("beta_hierarchy")
    base = RunConfig(sample_fraction=0.3)
    rows = run_sweep({"beta_hierarchy": ["0.5"]}, base, store=coqa_store)
    assert len(rows) == 1
    rows = run_sweep(parse_grid("beta_hierarchy=0,0.5,1"), base, store=coqa_store)
    assert len({r.config.config_digest for r in rows}) == 3
    with pytest.raises(ValidationError, match="cap"):
        run_sweep(parse_grid("beta_hierarchy=0,1,2;w_user=0,1"), base, store=coqa_store, cap=5)
    with pytest.raises(ValidationError):
        run_sweep(parse_grid("tau_surprise=0.1,0.9"), base, store=coqa_store)


def test_sweep_prefers_hierarchy_on_planted_corpus():
    store = planted_store(seed=1)
    base = RunConfig(top_k=1, sample_fraction=1.0, barrier_mode="open")
    rows = run_sweep(parse_grid("beta_hierarchy=0,0.5,1,2"), base, store=store)
    best = best_row(rows)
    assert float(best.settings["beta_hierarchy"]) > 0
    assert best.report.f1 > rows[0].report.f1
    text = sweep_csv(rows)
    assert text.splitlines()[0].startswith("run,beta_hierarchy,precision")
    assert sum(1 for line in text.splitlines()[1:] if line.endswith(",*")) == 1


def test_rwlock_excludes_writers_from_readers():
    lock, state, errors = RWLock(), {"writing": False, "readers": 0, "max_readers": 0}, []
    guard = threading.Lock()

    def reader():
        for _ in range(50):
            with lock.read():
                with guard:
                    state["readers"] += 1
                    state["max_readers"] = max(state["max_readers"], state["readers"])
                if state["writing"]:
                    errors.append("reader saw writer")
                time.sleep(0.0002)
                with guard:
                    state["readers"] -= 1

    def writer():
        for _ in range(30):
            with lock.write():
                with lock.write(), lock.read():  # re-entry by the owning thread
                    state["writing"] = True
                    if state["readers"]:
                        errors.append("writer overlapped readers")
                    time.sleep(0.0002)
                    state["writing"] = False

    threads = [threading.Thread(target=reader) for _ in range(4)] + \
              [threading.Thread(target=writer) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=20)
    assert not errors and not any(t.is_alive() for t in threads)
    assert state["max_readers"] >= 2
