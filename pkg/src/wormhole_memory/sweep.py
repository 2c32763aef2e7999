"""Exhaustive grid search over dynamics and retrieval parameters."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

from .coqa import populate
from .config import RunConfig
from .errors import ConfigurationError, ValidationError
from .evaluation import CSV_HEADER, EvalReport, run_eval
from .store import MemoryStore

DEFAULT_CAP = 256
STORE_KEYS = {"dim", "ngram_max", "alpha_momentum", "lambda_decay", "tau_surprise"}


def parse_grid(text: str) -> dict[str, list[str]]:
    """``"beta_hierarchy=0,0.5,1;w_user=0,1"`` -> ordered mapping of value lists."""
    grid = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigurationError(f"grid entry {part!r} is not key=v1,v2,...")
        key, values = (s.strip() for s in part.split("=", 1))
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigurationError(f"grid key {key!r} has no values")
        if key in grid:
            raise ConfigurationError(f"grid key {key!r} given twice")
        grid[key] = vals
    if not grid:
        raise ConfigurationError("empty grid")
    return grid


@dataclass(frozen=True)
class SweepRow:
    run: int
    settings: dict
    config: RunConfig
    report: EvalReport


def run_sweep(grid: dict, base: RunConfig, store: Optional[MemoryStore] = None,
              dialogues: Optional[Sequence] = None, cap: int = DEFAULT_CAP) -> list[SweepRow]:
    """One evaluation per grid point, in enumeration order.

    Keys that shape the store (dynamics, dimension) need ``dialogues`` so the
    store can be rebuilt per point; otherwise ``store`` is shared read-only.
    """
    total = 1
    for vals in grid.values():
        total *= len(vals)
    if total > cap:
        raise ValidationError(f"grid has {total} combinations, cap is {cap}")
    configs = []
    for combo in itertools.product(*grid.values()):
        settings = dict(zip(grid, combo))
        configs.append((settings, base.replace(**settings)))
    rebuild = bool(STORE_KEYS & grid.keys())
    if rebuild and dialogues is None:
        raise ValidationError(f"grid keys {sorted(STORE_KEYS & grid.keys())} need a corpus input")
    if store is None and dialogues is None:
        raise ValidationError("sweep needs a store or a corpus")
    rows = []
    for i, (settings, cfg) in enumerate(configs, start=1):
        target = store
        if rebuild or target is None:
            target = MemoryStore(cfg.dim)
            populate(target, dialogues, cfg.embedder, cfg.dynamics)
        report, _, _ = run_eval(target, cfg.barrier_mode, cfg.harness_params(), cfg.strategy,
                                cfg.seed, cfg.sample_fraction, cfg.config_digest)
        rows.append(SweepRow(i, settings, cfg, report))
    return rows


def best_row(rows: Sequence[SweepRow]) -> SweepRow:
    # first row wins ties so the choice follows enumeration order
    return max(rows, key=lambda r: (r.report.f1, -r.run))


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    keys = list(rows[0].settings) if rows else []
    best = best_row(rows).run if rows else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([CSV_HEADER[0], *keys, *CSV_HEADER[1:], "config_digest", "seed", "best"])
    for r in rows:
        w.writerow([r.run, *(r.settings[k] for k in keys),
                    *(format(v, ".6f") for v in r.report.metrics().values()),
                    r.config.config_digest, r.config.seed, "*" if r.run == best else ""])
    return buf.getvalue()
