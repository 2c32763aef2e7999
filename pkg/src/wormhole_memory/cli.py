"""``wmm`` command line: ingest, simulate, query, eval, bench, sweep.

Exit codes: 0 success, 1 validation, 2 format, 3 runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

from .barrier import ALL, BarrierMode, OpenCmd, QueryCmd, load_script, run_script
from .bench import run_bench
from .config import RunConfig, load_config
from .coqa import check_expectations, parse_coqa, populate
from .errors import ValidationError, WMMError
from .evaluation import reports_to_csv, reports_to_json, run_eval
from .store import MemoryStore
from .sweep import DEFAULT_CAP, parse_grid, run_sweep, sweep_csv
from .synthetic import write_synthetic_coqa

log = logging.getLogger("wormhole_memory")

EXIT_OK, EXIT_VALIDATION, EXIT_FORMAT, EXIT_RUNTIME = 0, 1, 2, 3


def _emit(obj: dict, out=None):
    line = json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    (out or sys.stdout).write(line + "\n")


def _write_text(path: Optional[str], text: str):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), {
        "seed": getattr(args, "seed", None),
        "barrier_mode": getattr(args, "mode", None),
        "top_k": getattr(args, "k", None),
        "strategy": getattr(args, "strategy", None),
        "sample_fraction": getattr(args, "sample", None),
        "dim": getattr(args, "dim", None),
    })


def _require(args, name: str) -> str:
    value = getattr(args, name, None)
    if not value:
        raise ValidationError(f"--{name.replace('_', '-')} is required")
    return value


def _stamp(cfg: RunConfig) -> dict:
    return {"config_digest": cfg.config_digest, "seed": cfg.seed}


def cmd_ingest(args) -> int:
    cfg = _config(args)
    parsed = parse_coqa(args.input)
    store_path = _require(args, "store")
    if args.append and os.path.exists(store_path):
        store = MemoryStore.load(store_path)
    else:
        store = MemoryStore(cfg.dim)
    report = populate(store, parsed.dialogues, cfg.embedder, cfg.dynamics, args.user_strategy)
    store.save(store_path)
    warnings = check_expectations(parsed, args.expect_dialogues, args.expect_turns)
    for err in parsed.errors:
        log.warning("skipped %s", err)
    _emit({"command": "ingest", "dialogues": parsed.n_dialogues, "turns": parsed.n_turns,
           "skipped": parsed.skipped, "store_size": store.size, "warnings": warnings,
           **report.as_dict(), **_stamp(cfg)})
    return EXIT_VALIDATION if (warnings and args.strict) else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    store = MemoryStore.load(args.store) if getattr(args, "store", None) \
        else MemoryStore(cfg.dim)
    script = load_script(args.script)
    runlog = run_script(store, script, cfg.barrier_mode, cfg.harness_params(), cfg.seed,
                        cfg.config_digest)
    log_path = getattr(args, "log", None)
    if log_path:
        runlog.write(log_path)
    else:
        for line in runlog.lines():
            sys.stdout.write(line + "\n")
    if args.store_out:
        store.save(args.store_out)
    granted = sum(1 for e in runlog.access_events if e.decision == "Granted")
    _emit({"command": "simulate", "mode": cfg.barrier_mode, "events": len(script),
           "access_events": len(runlog.access_events), "granted": granted,
           "denied": len(runlog.access_events) - granted, **_stamp(cfg)},
          out=sys.stdout if log_path else sys.stderr)
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _config(args)
    store = MemoryStore.load(_require(args, "store"))
    events = [OpenCmd(s) for s in (args.open or "").split(",") if s]
    targets = ALL if args.targets == ALL else tuple(t for t in args.targets.split(",") if t)
    events.append(QueryCmd(args.origin, targets, args.user, args.text, args.topic, cfg.top_k))
    runlog = run_script(store, events, cfg.barrier_mode, cfg.harness_params(), cfg.seed,
                        cfg.config_digest)
    entry = [e for e in runlog.entries if e["type"] == "access"][-1]
    _emit({"command": "query", **entry, **_stamp(cfg)})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    store = MemoryStore.load(_require(args, "store"))
    report, runlog, _ = run_eval(store, cfg.barrier_mode, cfg.harness_params(), cfg.strategy,
                                 cfg.seed, cfg.sample_fraction, cfg.config_digest)
    if getattr(args, "log", None):
        runlog.write(args.log)
    text = reports_to_csv([report]) if args.format == "csv" else reports_to_json([report])
    _write_text(args.out, text)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = run_bench(args.n, cfg.dim, args.queries, cfg.top_k, cfg.seed, cfg.retrieval,
                       args.index)
    _emit({"command": "bench", **report, **_stamp(cfg)})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = parse_grid(args.grid)
    dialogues = parse_coqa(args.input).dialogues if args.input else None
    store = MemoryStore.load(args.store) if getattr(args, "store", None) else None
    rows = run_sweep(grid, cfg, store=store, dialogues=dialogues, cap=args.cap)
    _write_text(args.out, sweep_csv(rows))
    return EXIT_OK


def cmd_synth(args) -> int:
    write_synthetic_coqa(args.out, n_dialogues=args.dialogues, seed=args.seed or 0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--store", default=argparse.SUPPRESS, help="store file path")
    common.add_argument("--log", default=argparse.SUPPRESS, help="run log output path")

    parser = argparse.ArgumentParser(prog="wmm", parents=[common],
                                     description="Cross-session memory engine.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse CoQA and populate a store")
    p.add_argument("--input", required=True)
    p.add_argument("--expect-dialogues", type=int, default=500)
    p.add_argument("--expect-turns", type=int, default=7893)
    p.add_argument("--strict", action="store_true", help="count mismatches exit with 1")
    p.add_argument("--append", action="store_true", help="populate an existing store")
    p.add_argument("--user-strategy", choices=("per_dialogue", "single"),
                   default="per_dialogue")
    p.add_argument("--dim", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", parents=[common], help="replay a barrier script")
    p.add_argument("--script", required=True)
    p.add_argument("--mode", choices=[m.value for m in BarrierMode])
    p.add_argument("--k", type=int)
    p.add_argument("--store-out", help="save the store after the run")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("query", parents=[common], help="run one query through the barrier")
    p.add_argument("--origin", required=True)
    p.add_argument("--targets", required=True, help="comma list or 'all'")
    p.add_argument("--user", required=True)
    p.add_argument("--topic", default="")
    p.add_argument("--text", required=True)
    p.add_argument("--open", help="comma list of sessions to open first")
    p.add_argument("--mode", choices=[m.value for m in BarrierMode])
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="score cross-dialogue probes")
    p.add_argument("--mode", choices=[m.value for m in BarrierMode])
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=("strict", "dialogue"))
    p.add_argument("--sample", type=float, help="fraction of turns probed")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="top-k latency benchmark")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--dim", type=int)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--k", type=int)
    p.add_argument("--index", choices=("exhaustive", "pivot"), default="exhaustive")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", parents=[common], help="grid search with one eval per point")
    p.add_argument("--grid", required=True, help='e.g. "beta_hierarchy=0,0.5,1;w_user=0,1"')
    p.add_argument("--input", help="CoQA file; required when sweeping store-shaping keys")
    p.add_argument("--mode", choices=[m.value for m in BarrierMode])
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=("strict", "dialogue"))
    p.add_argument("--sample", type=float)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth-coqa", parents=[common],
                       help="write a synthetic corpus in CoQA format")
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=int, default=10)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except WMMError as exc:
        print(f"wmm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wmm: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
