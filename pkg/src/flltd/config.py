"""Experiment configuration: YAML schema, strict parsing and validation."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .adversary import AttackSpec
from .detection import DetectorConfig

RULES = ("fedavg", "fl_ltd")


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 16
    n_train: int = 2000
    n_test: int = 500
    separation: float = 3.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    limit: int | None = None


@dataclass(frozen=True)
class PartitionConfig:
    skew: float = 0.8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.2
    batch_size: int = 10
    hidden_dim: int = 0


@dataclass(frozen=True)
class AttackEntry:
    client_id: int
    spec: AttackSpec


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds: int = 20
    num_clients: int = 5
    rule: str = "fl_ltd"
    size_weighted_ltd: bool = False
    participation: float = 1.0
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    attacks: tuple = (AttackEntry(0, AttackSpec.coupled_default()),)

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def attack_for(self, client_id: int) -> AttackSpec:
        for entry in self.attacks:
            if entry.client_id == client_id:
                return entry.spec
        return AttackSpec()


def _fail(name, msg):
    raise ConfigError(f"{name}: {msg}")


def validate(cfg: ExperimentConfig):
    if cfg.seed < 0:
        _fail("seed", f"must be >= 0, got {cfg.seed}")
    if cfg.rounds < 0:
        _fail("rounds", f"must be >= 0, got {cfg.rounds}")
    if cfg.num_clients < 2:
        _fail("num_clients", f"must be >= 2, got {cfg.num_clients}")
    if cfg.rule not in RULES:
        _fail("rule", f"must be one of {RULES}, got {cfg.rule!r}")
    if not 0 < cfg.participation <= 1:
        _fail("participation", f"must lie in (0, 1], got {cfg.participation}")
    d = cfg.data
    if d.source not in ("synthetic", "idx"):
        _fail("data.source", f"must be 'synthetic' or 'idx', got {d.source!r}")
    if d.source == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(d, name):
                _fail(f"data.{name}", "required when data.source is 'idx'")
    else:
        if d.num_classes < 2:
            _fail("data.num_classes", f"must be >= 2, got {d.num_classes}")
        if d.dim < 1:
            _fail("data.dim", f"must be >= 1, got {d.dim}")
        if d.n_train < max(d.num_classes, cfg.num_clients):
            _fail("data.n_train", "must be at least num_classes and num_clients")
        if d.n_test < d.num_classes:
            _fail("data.n_test", "must be at least num_classes")
        if d.separation < 0:
            _fail("data.separation", f"must be >= 0, got {d.separation}")
    if not 0 <= cfg.partition.skew <= 1:
        _fail("partition.skew", f"must lie in [0, 1], got {cfg.partition.skew}")
    t = cfg.train
    if not (t.lr > 0 and math.isfinite(t.lr)):
        _fail("train.lr", f"must be > 0, got {t.lr}")
    if t.batch_size < 1:
        _fail("train.batch_size", f"must be >= 1, got {t.batch_size}")
    if t.hidden_dim < 0:
        _fail("train.hidden_dim", f"must be >= 0, got {t.hidden_dim}")
    seen = set()
    for i, entry in enumerate(cfg.attacks):
        if not 0 <= entry.client_id < cfg.num_clients:
            _fail(
                f"attacks[{i}].client_id",
                f"{entry.client_id} is outside [0, num_clients={cfg.num_clients})",
            )
        if entry.client_id in seen:
            _fail(f"attacks[{i}].client_id", f"duplicate client {entry.client_id}")
        seen.add(entry.client_id)


# --- (de)serialisation --------------------------------------------------------

_SECTIONS = {"data": DataConfig, "partition": PartitionConfig, "train": TrainConfig, "detector": DetectorConfig}
_ATTACK_FIELDS = [f.name for f in dataclasses.fields(AttackSpec)]


def _check_keys(raw, allowed, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")


def _coerce(value, default, name):
    # YAML already types scalars; only widen int -> float and reject bool/str mixups
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def _build(cls, raw, where):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(raw, fields, where)
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        default = getattr(defaults, key)
        if key == "update_magnitude" and value is not None:
            default = 0.0
        kwargs[key] = _coerce(value, default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw) -> ExperimentConfig:
    if raw is None:
        raw = {}
    top = [f.name for f in dataclasses.fields(ExperimentConfig)]
    _check_keys(raw, top, "config")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value or {}, key)
        elif key == "attacks":
            if value is None:
                value = []
            if not isinstance(value, list):
                raise ConfigError("attacks: expected a list")
            entries = []
            for i, item in enumerate(value):
                where = f"attacks[{i}]"
                _check_keys(item, ["client_id"] + _ATTACK_FIELDS, where)
                if "client_id" not in item:
                    raise ConfigError(f"{where}.client_id: required")
                cid = _coerce(item["client_id"], 0, f"{where}.client_id")
                spec = _build(AttackSpec, {k: v for k, v in item.items() if k != "client_id"}, where)
                entries.append(AttackEntry(cid, spec))
            kwargs[key] = tuple(entries)
        else:
            default = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}[key]
            kwargs[key] = _coerce(value, default, key)
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "attacks":
            out["attacks"] = [
                {"client_id": e.client_id, **dataclasses.asdict(e.spec)} for e in value
            ]
        elif dataclasses.is_dataclass(value):
            out[f.name] = dataclasses.asdict(value)
        else:
            out[f.name] = value
    return out


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"malformed YAML{where}: {getattr(exc, 'problem', exc)}") from None
    return from_dict(raw)


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def parse_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
