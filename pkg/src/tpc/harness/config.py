"""Run configuration: nested dataclasses loaded from TOML with dotted-path overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli
import tomli_w

from ..behavior import BehaviorConfig
from ..envs import BackgroundSource, EnvConfig
from ..world_model import LossWeights, WorldModelConfig

VARIANTS = ("full_tpc", "spc_only", "unstable_tpc")
PRECISIONS = ("float32", "float64")
# filled in from the environment, never read from a config file
DERIVED_MODEL_KEYS = ("obs_shape", "action_dim")


class ConfigError(ValueError):
    pass


@dataclass
class TrainSchedule:
    batch_size: int = 32
    chunk_length: int = 20
    updates_per_iteration: int = 50
    seed_episodes: int = 5
    total_env_steps: int = 50_000
    exploration_noise: float = 0.3
    model_lr: float = 6e-4
    actor_lr: float = 8e-5
    value_lr: float = 8e-5
    clip_norm: float = 100.0
    variant: str = "full_tpc"
    no_smoothing: bool = False
    separate_reward: bool = False
    checkpoint_every: int = 10
    eval_episodes: int = 3
    eval_episode_length: int = 1000
    # arithmetic precision for training; gradient checks always run in float64
    precision: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.seed_episodes < 1:
            raise ConfigError("seed_episodes must be >= 1")


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=lambda: EnvConfig(episode_length=500))
    model: WorldModelConfig = field(default_factory=WorldModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)

    def loss_weights(self):
        """Loss weights after applying the ablation variant."""
        w = dataclasses.replace(self.loss)
        if self.train.variant == "spc_only":
            w.lambda1 = 0.0
        elif self.train.variant == "unstable_tpc":
            w.lambda3 = 0.0
        return w

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in DERIVED_MODEL_KEYS:
            d["model"].pop(key)
        return _plain(d)

    def dumps(self):
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = sorted(_unknown_keys(cls, data))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        defaults = cls()
        sections = {}
        for f in dataclasses.fields(cls):
            raw = dict(data.get(f.name, {}))
            base = getattr(defaults, f.name)
            if f.name == "env" and "background" in raw:
                raw["background"] = dataclasses.replace(base.background, **raw["background"])
            sections[f.name] = dataclasses.replace(base, **_tuplify(type(base), raw))
        return cls(**sections)

    @classmethod
    def loads(cls, text, overrides=()):
        data = tomli.loads(text)
        for item in overrides:
            apply_override(data, item)
        return cls.from_dict(data)


_FIELD_TYPES = {
    "env": EnvConfig,
    "model": WorldModelConfig,
    "loss": LossWeights,
    "behavior": BehaviorConfig,
    "train": TrainSchedule,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tuplify(ftype, raw):
    out = {}
    for f in dataclasses.fields(ftype):
        if f.name in raw:
            v = raw[f.name]
            if isinstance(v, list):
                v = tuple(v)
            elif isinstance(f.default, float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            out[f.name] = v
    return out


def _unknown_keys(cls, data, prefix=""):
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        path = prefix + key
        if key not in names or (cls is WorldModelConfig and key in DERIVED_MODEL_KEYS):
            yield path
            continue
        sub = _FIELD_TYPES.get(key) if cls is TrainConfig else None
        if cls is EnvConfig and key == "background":
            sub = BackgroundSource
        if sub is not None:
            if not isinstance(value, dict):
                yield path
                continue
            yield from _unknown_keys(sub, value, path + ".")


def parse_value(text):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(data, item):
    """Apply ``"section.key=value"`` to a nested dict in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    path, text = item.split("=", 1)
    keys = path.strip().split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {path!r} descends into a non-table value")
    node[keys[-1]] = parse_value(text.strip())


def load_config(path, overrides=()):
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.loads(fh.read(), overrides)
