"""Run configuration: JSON schema, validation, defaults echo, and the two
built-in experiment presets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .synthgen import SourceSpec, default_sources
from .trainer import TrainConfig

MIXING_KINDS = ("linear", "tanh2")


@dataclass
class DataConfig:
    T: int = 5000
    seed: int = 0
    m: int = 3
    mixing_kind: str = "linear"
    hidden: int = 8  # tanh2 only: width of the inner mixing layer
    cond_max: float = 20.0  # linear only: condition-number rejection bound
    sources: list[SourceSpec] = field(default_factory=default_sources)

    @property
    def n(self) -> int:
        return len(self.sources)

    def validate(self):
        if self.T < 1:
            raise ConfigError(f"data.T must be >= 1, got {self.T}")
        if self.m < 1:
            raise ConfigError(f"data.m must be >= 1, got {self.m}")
        if self.mixing_kind not in MIXING_KINDS:
            raise ConfigError(
                f"data.mixing_kind must be one of {MIXING_KINDS}, "
                f"got {self.mixing_kind!r}"
            )
        if self.mixing_kind == "tanh2" and self.hidden < 1:
            raise ConfigError(f"data.hidden must be >= 1, got {self.hidden}")
        if self.cond_max <= 1.0:
            raise ConfigError(f"data.cond_max must be > 1, got {self.cond_max}")
        if not self.sources:
            raise ConfigError("data.sources must list at least one source")
        for j, s in enumerate(self.sources):
            try:
                s.validate()
            except Exception as e:
                raise ConfigError(f"data.sources[{j}]: {e}") from e

    def to_json_obj(self):
        return {
            "T": self.T,
            "seed": self.seed,
            "m": self.m,
            "mixing_kind": self.mixing_kind,
            "hidden": self.hidden,
            "cond_max": self.cond_max,
            "sources": [s.to_json_obj() for s in self.sources],
        }

    @classmethod
    def from_json_obj(cls, obj) -> "DataConfig":
        known = {"T", "seed", "m", "mixing_kind", "hidden", "cond_max", "sources"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown data config fields: {sorted(unknown)}")
        kwargs = dict(obj)
        if "sources" in kwargs:
            kwargs["sources"] = [
                SourceSpec.from_json_obj(s) for s in kwargs["sources"]
            ]
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class RunConfig:
    name: str = "run"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(n=3, m=3))

    def validate(self):
        self.data.validate()
        self.train.validate()
        if self.train.n != self.data.n:
            raise ConfigError(
                f"train.n ({self.train.n}) must match the number of sources "
                f"({self.data.n})"
            )
        if self.train.m != self.data.m:
            raise ConfigError(
                f"train.m ({self.train.m}) must match data.m ({self.data.m})"
            )
        if self.train.T is not None and self.train.T != self.data.T:
            raise ConfigError(
                f"train.T ({self.train.T}) must match data.T ({self.data.T})"
            )

    def with_seed(self, seed: int) -> "RunConfig":
        """A copy with both the data and training seeds overridden."""
        obj = self.to_json_obj()
        obj["data"]["seed"] = int(seed)
        obj["train"]["seed"] = int(seed)
        return RunConfig.from_json_obj(obj)

    def to_json_obj(self):
        return {
            "name": self.name,
            "data": self.data.to_json_obj(),
            "train": self.train.to_json_obj(),
        }

    @classmethod
    def from_json_obj(cls, obj) -> "RunConfig":
        known = {"name", "data", "train"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(
            name=obj.get("name", "run"),
            data=DataConfig.from_json_obj(obj.get("data", {})),
            train=TrainConfig.from_json_obj(
                _with_shape_defaults(obj.get("train", {}), obj.get("data", {}))
            ),
        )
        cfg.validate()
        return cfg


def _with_shape_defaults(train_obj: dict, data_obj: dict) -> dict:
    """Fill train.n / train.m / train.T from the data section when omitted."""
    out = dict(train_obj)
    n_sources = len(data_obj.get("sources", default_sources()))
    out.setdefault("n", n_sources)
    out.setdefault("m", data_obj.get("m", 3))
    out.setdefault("T", data_obj.get("T", 5000))
    return out


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return RunConfig.from_json_obj(obj)


def write_effective_config(config: RunConfig, path):
    """Echo the fully-defaulted config next to a run's outputs."""
    Path(path).write_text(json.dumps(config.to_json_obj(), indent=2) + "\n")


def merge_config_objs(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins on scalar/list conflicts."""
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config_objs(out[key], val)
        else:
            out[key] = val
    return out


def preset_config(experiment: str, seed: int = 0) -> RunConfig:
    """The two built-in experiment setups at desk scale."""
    if experiment == "linear":
        obj = {
            "name": "linear",
            "data": {"T": 5000, "seed": seed, "m": 3, "mixing_kind": "linear"},
            "train": {
                "seed": seed,
                "K": 3,
                "encoder_hidden": [16],
                "decoder_hidden": [],
            },
        }
    elif experiment == "nonlinear":
        obj = {
            "name": "nonlinear",
            "data": {
                "T": 5000,
                "seed": seed,
                "m": 3,
                "mixing_kind": "tanh2",
                "hidden": 8,
            },
            "train": {
                "seed": seed,
                "K": 3,
                "encoder_hidden": [32, 32],
                "decoder_hidden": [16, 16],
            },
        }
    else:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected 'linear' or 'nonlinear'"
        )
    return RunConfig.from_json_obj(obj)
