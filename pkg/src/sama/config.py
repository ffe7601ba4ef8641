"""Single-document run configuration with a strict schema.

Every section maps onto a dataclass; unknown keys at any level are rejected
and the top-level ``version`` must match. One top-level ``seed`` drives data
generation, training and sampling, and ``SAMA_SEED`` overrides it.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dit import DiTConfig
from .sampler import SamplerConfig
from .tokenization import ConfigurationError
from .training import TrainConfig

CONFIG_VERSION = 1
SEED_ENV = "SAMA_SEED"


@dataclass
class DataConfig:
    n_image_edit: int = 64
    n_video_edit: int = 64
    n_t2v: int = 64
    T: int = 8
    height: int = 32
    width: int = 32
    max_shapes: int = 2
    edit_weights: dict = field(default_factory=lambda: {"recolor": 1.0, "remove": 1.0, "add": 1.0, "style": 1.0})
    heldout_fraction: float = 0.1
    judge: bool = True
    corrupt_fraction: float = 0.1
    corrupt_noise: float = 0.15

    def __post_init__(self):
        for name in ("n_image_edit", "n_video_edit", "n_t2v"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"data.{name} must be >= 0")
        if self.T < 2 or self.T % 2:
            raise ConfigurationError(f"data.T must be even and >= 2, got {self.T}")
        if not 0 <= self.heldout_fraction < 1:
            raise ConfigurationError(f"data.heldout_fraction must lie in [0, 1), got {self.heldout_fraction}")
        if not 0 <= self.corrupt_fraction <= 1:
            raise ConfigurationError(f"data.corrupt_fraction must lie in [0, 1], got {self.corrupt_fraction}")
        if not self.edit_weights or any(w < 0 for w in self.edit_weights.values()) \
                or sum(self.edit_weights.values()) <= 0:
            raise ConfigurationError("data.edit_weights must be non-negative with a positive sum")


@dataclass
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "runs/default"


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: DiTConfig = field(default_factory=DiTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        # the top-level seed is authoritative
        self.train.seed = self.seed
        self.sampler.seed = self.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"].pop("seed")
        d["sampler"].pop("seed")
        d["train"]["betas"] = list(d["train"]["betas"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


SECTIONS = {"data": DataConfig, "model": DiTConfig, "train": TrainConfig,
            "sampler": SamplerConfig, "paths": PathsConfig}
_SEEDED = {"train", "sampler"}


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)} - ({"seed"} if name in _SEEDED else set())
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid {name!r} section: {e}") from None


def from_dict(raw: dict, env: dict | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(raw) - {"version", "seed", *SECTIONS})
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {unknown}")
    version = raw.get("version")
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"config version must be {CONFIG_VERSION}, got {version!r}")
    seed = raw.get("seed", 0)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigurationError(f"seed must be an integer, got {seed!r}")
    parts = {name: _section(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()}
    return RunConfig(version=version, seed=seed, **parts)


def load_config(path, env: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
    return from_dict(raw, env)


def apply_override(cfg: RunConfig, dotted: str, value) -> RunConfig:
    """Return a copy with ``section.key`` set; the key must already exist."""
    raw = cfg.to_dict()
    raw["seed"] = cfg.seed
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigurationError(f"no config section {k!r} in {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value
    return from_dict(raw, env={})
