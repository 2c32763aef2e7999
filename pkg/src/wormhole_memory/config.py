"""Run configuration: a flat ``key=value`` file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from typing import Mapping, Optional

from .barrier import BarrierMode, HarnessParams
from .dynamics import DynamicsParams
from .embedder import EmbedderConfig
from .errors import ConfigurationError, ContractViolation
from .merge import MergeParams
from .retrieval import RetrievalParams


@dataclass(frozen=True)
class RunConfig:
    dim: int = 256
    ngram_max: int = 2
    alpha_momentum: float = 0.3
    lambda_decay: float = 0.01
    tau_surprise: float = 0.5
    beta_hierarchy: float = 0.5
    w_user: float = 1.0
    w_topic: float = 0.5
    w_time: float = 0.25
    time_horizon: int = 1000
    top_k: int = 5
    barrier_mode: str = "gated"
    seed: int = 0
    strategy: str = "strict"
    gate: float = 0.5
    w_r_scale: float = 1.0
    adaptive_gate: bool = False
    sample_fraction: float = 0.8

    def __post_init__(self):
        try:
            self.harness_params()
        except ContractViolation as exc:
            raise ConfigurationError(str(exc)) from None
        if self.top_k < 1:
            raise ConfigurationError(f"top_k must be >= 1, got {self.top_k}")
        if self.barrier_mode not in {m.value for m in BarrierMode}:
            raise ConfigurationError(f"barrier_mode must be isolated|gated|open, "
                                     f"got {self.barrier_mode!r}")
        if self.strategy not in ("strict", "dialogue"):
            raise ConfigurationError(f"strategy must be strict|dialogue, got {self.strategy!r}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigurationError(f"sample_fraction must lie in (0, 1], "
                                     f"got {self.sample_fraction}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    @property
    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(self.dim, self.ngram_max)

    @property
    def dynamics(self) -> DynamicsParams:
        return DynamicsParams(self.alpha_momentum, self.lambda_decay, self.tau_surprise)

    @property
    def retrieval(self) -> RetrievalParams:
        return RetrievalParams(self.beta_hierarchy, self.w_user, self.w_topic, self.w_time,
                               self.time_horizon)

    @property
    def merge(self) -> MergeParams:
        return MergeParams(self.gate, self.w_r_scale, self.adaptive_gate)

    def harness_params(self) -> HarnessParams:
        return HarnessParams(self.embedder, self.dynamics, self.retrieval, self.merge, self.top_k)

    def canonical(self) -> str:
        return "".join(f"{f.name}={_canon(getattr(self, f.name))}\n"
                       for f in sorted(fields(self), key=lambda f: f.name))

    @property
    def config_digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return load_config(overrides=changes, base=self)


def _canon(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    kind = _TYPES[key]
    if not isinstance(raw, str):
        if kind == "float" and isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if kind == "int" and isinstance(raw, int) and not isinstance(raw, bool):
            return raw
        if kind == "bool" and isinstance(raw, bool):
            return raw
        if kind == "str" and isinstance(raw, BarrierMode):
            return raw.value
        raise ConfigurationError(f"{key}: expected {kind}, got {raw!r}")
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: expected {kind}, got {raw!r}") from None
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected true/false, got {raw!r}")
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigurationError(f"unknown config key {key!r} (line {lineno})")
        out[key] = value
    return out


def load_config(path=None, overrides: Optional[Mapping] = None,
                base: Optional[RunConfig] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (None values ignored)."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _TYPES:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = value
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return dataclasses.replace(base or RunConfig(), **coerced)
