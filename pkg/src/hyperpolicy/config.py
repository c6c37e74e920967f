"""Run configuration: nested dataclasses with YAML load/save and strict keys.

Every field has a default, so an empty file is a valid (smoke-budget) run.
Unknown keys are rejected with the offending path, and parse -> serialize ->
parse is the identity on the parsed object.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

__all__ = [
    "ConfigError",
    "EnvSection",
    "TrainerSection",
    "BaseInitSection",
    "InitSection",
    "SweepSection",
    "AnalyzeSection",
    "EquivalenceSection",
    "RunConfig",
    "load_config",
    "save_config",
    "config_to_dict",
]

SQRT2 = math.sqrt(2.0)

ARCHITECTURES = ("standard", "hypernetwork", "film")
ENCODERS = ("onehot", "recurrent")


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    width: int = 5
    height: int = 5
    episode_len: int = 15
    episodes_per_meta: int = 4
    step_reward: float = -0.1
    goal_reward: float = 1.0
    observation: str = "coordinates"


@dataclass
class TrainerSection:
    gamma: float = 0.95
    gae_lambda: float = 0.95
    learning_rate: float | None = None  # None -> architecture default
    optimizer: str = "adam"
    adam_eps: float = 1e-8
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 0.5
    workers: int = 16
    total_env_steps: int = 19_200  # smoke budget: 20 updates at defaults
    eval_every: int = 10
    eval_meta_episodes: int = 24
    dump_trajectories: bool = False

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"trainer.gamma must be in [0, 1), got {self.gamma}")
        for name in ("gae_lambda", "entropy_coef", "value_coef", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"trainer.{name} must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.workers < 1:
            raise ConfigError("trainer.workers must be >= 1")


# Tuned architecture-default learning rates: standard networks train well an
# order of magnitude hotter than hypernetworks.
DEFAULT_LR = {"standard": 1e-3, "hypernetwork": 1e-4, "film": 1e-4}


@dataclass
class BaseInitSection:
    kind: str = "normc"
    hidden_gain: float = 1.0
    actor_head_gain: float = SQRT2
    critic_head_gain: float = SQRT2
    distribution: str = "uniform"


@dataclass
class InitSection:
    scheme: str = "bias_hyperinit"
    gain: float = SQRT2
    distribution: str = "normal"
    embedding_second_moment: float | None = None  # hfi; None -> auto from encoder
    base: BaseInitSection = field(default_factory=BaseInitSection)


@dataclass
class SweepSection:
    architectures: list[str] = field(default_factory=lambda: ["hypernetwork"])
    sizes: list[str] = field(default_factory=lambda: ["XS"])
    schemes: list[str] = field(default_factory=lambda: ["bias_hyperinit"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])


@dataclass
class AnalyzeSection:
    schemes: list[str] = field(
        default_factory=lambda: ["kaiming", "normc", "orthogonal", "hfi", "weight_hyperinit", "bias_hyperinit"]
    )
    n_samples: int = 10_000
    n_seeds: int = 10
    probe_input_dim: int = 10
    probe_e_dim: int = 10
    pass_band: tuple[float, float] = (0.5, 2.0)
    fail_band: tuple[float, float] = (0.1, 10.0)
    stats_draws: int = 100_000


@dataclass
class EquivalenceSection:
    n_tasks: int = 8
    steps: int = 100
    batch: int = 16
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    hidden: list[int] = field(default_factory=lambda: [16, 16, 16])
    input_dim: int = 4
    action_dim: int = 4
    faults: list[str] = field(default_factory=lambda: ["head_bias", "dense_embedding", "adam_optimizer"])


@dataclass
class RunConfig:
    name: str = "run"
    architecture: str = "hypernetwork"
    base_size: str = "XS"
    encoder: str = "onehot"
    embedding_dim: int = 10  # recurrent encoder output; onehot uses n_tasks
    encoder_hidden: int = 64
    hypernet_hidden: list[int] = field(default_factory=list)
    init: InitSection = field(default_factory=InitSection)
    env: EnvSection = field(default_factory=EnvSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str | None = None
    sweep: SweepSection = field(default_factory=SweepSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)
    equivalence: EquivalenceSection = field(default_factory=EquivalenceSection)

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        from .layout import SIZE_TABLE

        if self.base_size not in SIZE_TABLE:
            raise ConfigError(f"unknown base size {self.base_size!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        self.trainer.validate()

    def learning_rate(self) -> float:
        if self.trainer.learning_rate is not None:
            return self.trainer.learning_rate
        return DEFAULT_LR[self.architecture]


_TUPLE_FIELDS = {"pass_band", "fail_band"}


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.default_factory, type) and dataclasses.is_dataclass(f.default_factory)
        ):
            kwargs[name] = _from_dict(f.default_factory, value, sub)
        elif name in _TUPLE_FIELDS:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(raw)
    return cfg


def parse_config(raw: dict) -> RunConfig:
    cfg = _from_dict(RunConfig, raw, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    def convert(val):
        if dataclasses.is_dataclass(val):
            return {f.name: convert(getattr(val, f.name)) for f in dataclasses.fields(val)}
        if isinstance(val, tuple):
            return list(val)
        if isinstance(val, list):
            return [convert(v) for v in val]
        return val

    return convert(cfg)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
