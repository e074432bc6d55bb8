"""INI configuration shared by every subcommand.

One section per module; keys are the field names of the matching dataclass::

    [env]       EnvConfig       grid, radio and reward constants
    [task]      TaskSpec        lam, layout_seed
    [data]      DataConfig      dataset size, capacity, task sampling
    [behavior]  BehaviorConfig  online DQN that records the offline data
    [train]     TrainConfig     offline I-DQN / CTDE-DQN / I-CQL / CTDE-CQL
    [meta]      MetaConfig      MAML over lambda-tasks
    [eval]      EvalConfig      rollouts and metric files
    [recipe]    free-form       experiment sweeps (see :mod:`mcql.recipes`)

Missing keys keep their defaults. ``none`` (any case) or an empty value maps
to ``None`` for optional fields; tuples are comma separated.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import types
import typing
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .env import ConfigError, EnvConfig, TaskSpec
from .meta import MetaConfig
from .trainers import BehaviorConfig, TrainConfig

PRESETS = ("desk", "paper", "fig2-independent", "fig2-ctde", "fig3a-shots", "fig3b-tasks", "fig3c-lambda")


@dataclass(frozen=True)
class DataConfig:
    """Offline dataset settings.

    ``size`` is the number of retained entries per agent; the behavior learner
    runs ``size / 0.1`` online steps. Task lambdas for meta-training are drawn
    log-uniformly from the random-walk derived range unless ``lam_low`` and
    ``lam_high`` are given.
    """

    size: int = 2000
    capacity: int | None = None
    tasks: int = 5
    task_seed: int = 123
    lam_low: float | None = None
    lam_high: float | None = None
    lambda_episodes: int = 200

    def __post_init__(self):
        if self.size < 1 or self.tasks < 1:
            raise ValueError("data size and task count must be positive")
        if self.capacity is not None and self.capacity < self.size:
            raise ValueError(f"dataset size {self.size} exceeds capacity {self.capacity}")


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 100
    format: str = "csv"

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError(f"eval episodes must be positive, got {self.episodes}")
        if self.format not in ("csv", "json-lines"):
            raise ValueError(f"metrics format must be 'csv' or 'json-lines', got {self.format!r}")


SECTIONS = {
    "env": EnvConfig, "task": TaskSpec, "data": DataConfig, "behavior": BehaviorConfig,
    "train": TrainConfig, "meta": MetaConfig, "eval": EvalConfig,
}


@dataclass(frozen=True)
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    data: DataConfig = field(default_factory=DataConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    recipe: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "Config":
        """Same config with every seeded component reseeded."""
        return replace(self, train=replace(self.train, seed=seed), meta=replace(self.meta, seed=seed))


def _coerce(text: str, hint, where: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("", "none"):
            if type(None) in args:
                return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(text, inner[0], where)
    if origin is tuple:
        return tuple(_coerce(part, args[0], where) for part in text.split(",") if part.strip())
    try:
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {hint.__name__}") from None
    return text


def _build(cls, items: dict, section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(sorted(unknown))}")
    values = {k: _coerce(v, hints[k], f"[{section}] {k}") for k, v in items.items()}
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse(text: str, base: Config | None = None) -> Config:
    """Parse INI text; sections not present keep the values from ``base``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    base = base or Config()
    unknown = set(parser.sections()) - set(SECTIONS) - {"recipe"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in SECTIONS.items():
        if parser.has_section(name):
            current = {f.name: getattr(getattr(base, name), f.name) for f in fields(cls)}
            items = {k: _format(v) for k, v in current.items()}
            given = dict(parser.items(name))
            if name == "env" and "D" in given and "delta" not in given:
                items["delta"] = "none"
            items.update(given)
            parts[name] = _build(cls, items, name)
    if parser.has_section("recipe"):
        parts["recipe"] = dict(parser.items("recipe"))
    return replace(base, **parts)


def load(path=None, base: Config | None = None) -> Config:
    """Load a config file, or a preset by name (``desk``, ``fig2-ctde``, ...)."""
    if path is None:
        return base or Config()
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        name = str(path)
        if name not in ("desk", "paper"):
            # figure recipes are layered on the desk preset
            base = parse(preset_text("desk"), base)
        return parse(preset_text(name), base)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse(text, base)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("mcql").joinpath("presets", f"{name}.ini").read_text()


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump(cfg: Config) -> str:
    """INI text that :func:`parse` reads back to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        part = getattr(cfg, name)
        parser[name] = {f.name: _format(getattr(part, f.name)) for f in dataclasses.fields(part)}
    if cfg.recipe:
        parser["recipe"] = dict(cfg.recipe)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
