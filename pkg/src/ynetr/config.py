"""Run configuration: one JSON document wiring every pipeline stage.

Loading is strict (unknown keys are rejected at every level) and the
canonical re-serialization spells out every default, so a config echo
fully determines a run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .inference import InferenceConfig
from .losses import LossConfig
from .model import ModelConfig
from .phantom import PhantomSpec
from .sampling import SamplerConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class IntensityConfig:
    lo: float = -175.0
    hi: float = 250.0

    def validate(self):
        if self.lo >= self.hi:
            raise ConfigError(f"intensity window needs lo < hi, got [{self.lo}, {self.hi}]")
        return self


@dataclass
class PhantomRunConfig:
    count: int = 4
    spec: PhantomSpec = field(default_factory=PhantomSpec)

    def validate(self):
        if self.count < 0:
            raise ConfigError("phantom count must be nonnegative")
        self.spec.validate()
        return self


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    deterministic: bool = True
    intensity: IntensityConfig = field(default_factory=IntensityConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    phantom: PhantomRunConfig = field(default_factory=PhantomRunConfig)

    def validate(self):
        try:
            self.intensity.validate()
            self.model.validate()
            self.sampler.validate()
            self.train.validate()
            self.inference.validate()
            self.phantom.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if tuple(self.sampler.window) != tuple(self.model.input_dims):
            raise ConfigError(
                f"sampler window {self.sampler.window} must equal model input dims "
                f"{self.model.input_dims}"
            )
        if self.model.num_classes != 2:
            raise ConfigError("the segmentation pipeline is binary: num_classes must be 2")
        return self


_SECTIONS = {
    "intensity": IntensityConfig,
    "model": ModelConfig,
    "sampler": SamplerConfig,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "phantom": PhantomRunConfig,
}

_NESTED = {
    TrainConfig: {"loss": LossConfig},
    PhantomRunConfig: {"spec": PhantomSpec},
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    sub = _NESTED.get(cls, {})
    for key, value in data.items():
        if key in sub:
            kwargs[key] = _build(sub[key], value, f"{path}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    names = {f.name for f in fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def run_config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(run_config_to_dict(cfg), sort_keys=True, indent=2) + "\n"


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return run_config_from_dict(data)


def write_config_echo(cfg: RunConfig, out_dir):
    path = Path(out_dir) / "config.echo.json"
    path.write_text(canonical_json(cfg))
    return path
