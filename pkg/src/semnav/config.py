"""Layered run configuration: built-in defaults < config file < command-line flags.

A config document is a mapping of section name to a mapping of keys::

    harness:
      max_candidates: 10
    utility:
      gamma: 3.0
    run:
      policy: greedy-goal

Unknown sections or keys are rejected with the dotted key named in the error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .harness import POLICIES, Bundle, ConfigError, HarnessConfig
from .memory import MergeConfig
from .planner import PlannerConfig
from .utility import UtilityConfig
from .world import SensorSpec
from .wtrp import MotionConfig


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "mock"  # or "remote"
    url: str = ""
    timeout_ms: int = 10000
    tables: str = ""  # path to a tables JSON; empty means the packaged default
    latency: float = 0.0  # seconds of simulated reasoning latency (mock only)
    visibility_threshold: float = 0.8

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ConfigError(f"oracle.kind must be 'mock' or 'remote', got {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ConfigError("oracle.timeout_ms must be positive")
        if self.latency < 0:
            raise ConfigError("oracle.latency must be non-negative")


@dataclass(frozen=True)
class RunSettings:
    policy: str = "full"
    seed: int = 0
    plots: bool = True

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"run.policy must be one of {', '.join(POLICIES)}, got {self.policy!r}")


SECTIONS = {
    "merge": MergeConfig,
    "utility": UtilityConfig,
    "motion": MotionConfig,
    "planner": PlannerConfig,
    "sensor": SensorSpec,
    "harness": HarnessConfig,
    "oracle": OracleConfig,
    "run": RunSettings,
}


@dataclass(frozen=True)
class RunConfig:
    merge: MergeConfig = field(default_factory=MergeConfig)
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def bundle(self) -> Bundle:
        return Bundle(self.merge, self.utility, self.motion, self.planner, self.sensor, self.harness)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


def _coerce(key: str, value, default):
    """Convert ``value`` to the type of ``default``."""
    kind = type(default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "on", "0", "false", "no", "off"):
            return value.lower() in ("1", "true", "yes", "on")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        if f != int(f):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(f)
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return str(value)


def apply_overrides(cfg: RunConfig, doc: dict, origin: str = "config") -> RunConfig:
    """Return ``cfg`` with the sections in ``doc`` applied; validates every section touched."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a mapping of sections")
    updates = {}
    for section, values in doc.items():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown config key {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: section {section!r} must be a mapping")
        current = updates.get(section, getattr(cfg, section))
        known = {f.name for f in fields(current)}
        changes = {}
        for key, value in values.items():
            dotted = f"{section}.{key}"
            if key not in known:
                raise ConfigError(f"{origin}: unknown config key {dotted!r}")
            changes[key] = _coerce(dotted, value, getattr(current, key))
        try:
            updates[section] = replace(current, **changes)
        except ConfigError as exc:
            raise ConfigError(f"{origin}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{origin}: section {section!r}: {exc}") from exc
    return replace(cfg, **updates)


def read_config_file(path) -> dict:
    """JSON for ``.json`` files, YAML otherwise."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"config {path} does not parse: {exc}") from exc
    return doc or {}


def parse_assignment(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    lhs, sep, value = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    return section, key, value.strip()


def load_run_config(path=None, assignments=(), flags: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``--set`` assignments, then explicit flags."""
    cfg = RunConfig()
    if path is not None:
        cfg = apply_overrides(cfg, read_config_file(path), origin=str(path))
    doc: dict = {}
    for text in assignments:
        section, key, value = parse_assignment(text)
        doc.setdefault(section, {})[key] = value
    if doc:
        cfg = apply_overrides(cfg, doc, origin="--set")
    if flags:
        cfg = apply_overrides(cfg, flags, origin="flags")
    return cfg
