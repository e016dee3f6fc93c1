"""Run configuration: one JSON-serializable tree covering every knob.

A run directory always receives the exact resolved configuration that
produced it, and the short hash of that canonical JSON names artifacts, so
any output can be traced back to its settings. Dotted-path overrides
(`model.base_channels=4`) come from the command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MissingInputError, ParameterError
from .losses import LossWeights
from .model import ModelConfig
from .optim import SCHEDULE_KINDS

__all__ = ["OhemConfig", "ScheduleConfig", "TrainConfig", "load_config", "config_hash"]


@dataclass
class OhemConfig:
    thresh: float = 0.7
    min_kept_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.thresh <= 1.0:
            raise ParameterError(f"ohem thresh must lie in (0, 1], got {self.thresh}")
        if not 0.0 < self.min_kept_fraction <= 1.0:
            raise ParameterError(f"min_kept_fraction must lie in (0, 1], got {self.min_kept_fraction}")

    def min_kept(self, n_valid: int) -> int:
        return max(1, int(self.min_kept_fraction * n_valid))


@dataclass
class ScheduleConfig:
    """Learning-rate policy settings; the iteration count lives on TrainConfig."""

    kind: str = "two_cycle_sgdr_poly"
    power: float = 0.9
    cycles: int = 2
    min_lr: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ParameterError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")


@dataclass
class TrainConfig:
    data_root: str = "data"
    out_dir: str = "runs"
    run_dir: str | None = None
    model: ModelConfig = field(default_factory=lambda: ModelConfig(num_classes=4))
    weights: LossWeights = field(default_factory=LossWeights)
    ohem: OhemConfig = field(default_factory=OhemConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    total_iters: int = 300
    batch_size: int = 4
    lr_base: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    edge_window: int = 3
    ignore_value: int = 255
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.total_iters < 0:
            raise ParameterError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_base <= 0:
            raise ParameterError(f"lr_base must be > 0, got {self.lr_base}")
        if self.checkpoint_every < 0:
            raise ParameterError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.edge_window < 1 or self.edge_window % 2 == 0:
            raise ParameterError(f"edge_window must be odd and >= 1, got {self.edge_window}")

    def with_weights(self, c_s: float, c_e: float, c_c: float) -> "TrainConfig":
        new_weights = dataclasses.replace(self.weights, c_s=c_s, c_e=c_e, c_c=c_c)
        return dataclasses.replace(self, weights=new_weights)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["input_size"] = list(d["model"]["input_size"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


_SECTIONS = {"model": ModelConfig, "weights": LossWeights, "ohem": OhemConfig, "schedule": ScheduleConfig}


def _build_section(cls, values: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]!r}")
    if cls is ModelConfig and "input_size" in values:
        values = dict(values, input_size=tuple(values["input_size"]))
    try:
        return cls(**values)
    except (TypeError, ParameterError) as e:
        raise ConfigError(f"invalid config section {path!r}: {e}") from None


def config_from_dict(d: dict) -> TrainConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(d).__name__}")
    values: dict = {}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    for key, val in d.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            values[key] = _build_section(_SECTIONS[key], val, key)
        else:
            values[key] = val
    try:
        return TrainConfig(**values)
    except (TypeError, ParameterError) as e:
        raise ConfigError(f"invalid config: {e}") from None


def load_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Read a JSON config file and apply dotted-path overrides on top."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from None
    base = config_from_dict(raw)
    merged = base.to_dict()
    for dotted, text in (overrides or {}).items():
        _apply_override(merged, dotted, text)
    return config_from_dict(merged)


def _apply_override(tree: dict, dotted: str, text: str) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text  # bare strings (e.g. poly) come through unquoted
    node[leaf] = value


def config_hash(config: TrainConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
