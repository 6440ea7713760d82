"""Experiment configuration: one JSON document drives every subcommand.

The config pins data locations, the model family and its architecture
fields, the training schedule, the window geometry (m input steps, n
output steps), the number of correction levels, the feature toggle (4
physical channels or 7 with engineered ones), the seed, and the device.
A single seed determines every stochastic choice downstream: the
synthetic geometries, the train/validation split, weight init, and
batch order.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .models import ModelSpec
from .physics import SynthConfig
from .stacking import TrainConfig

_MODEL_FIELDS = {f.name for f in fields(ModelSpec)} - {
    "family", "in_steps", "out_steps", "in_channels", "out_channels"}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed", "device"}
_SYNTH_FIELDS = {f.name for f in fields(SynthConfig)} - {"seed"}


@dataclass
class ExperimentConfig:
    """Everything a run needs, with working desk-scale defaults."""

    root: str = "experiment"
    data_dir: str = ""        # defaults to <root>/data when empty
    seed: int = 0
    device: str = "cpu"
    features: int = 7         # input channels: 4 physical or 7 with engineered
    family: str = "convlstm"
    in_steps: int = 5
    out_steps: int = 5
    stride: int = 1
    levels: int = 3           # correction levels on top of level 0
    sim_count: int = 6
    train_count: int = 5
    model: dict = field(default_factory=dict)   # ModelSpec field overrides
    train: dict = field(default_factory=dict)   # TrainConfig field overrides
    synth: dict = field(default_factory=dict)   # SynthConfig field overrides

    def __post_init__(self) -> None:
        if self.features not in (4, 7):
            raise ConfigError("features must be 4 or 7")
        if self.levels < 0:
            raise ConfigError("levels must be non-negative")
        if self.in_steps < 1 or self.out_steps < 1 or self.stride < 1:
            raise ConfigError("in_steps, out_steps, and stride must be positive")
        if self.sim_count < 2 or not 0 < self.train_count < self.sim_count:
            raise ConfigError(
                "need at least one training and one validation simulation"
            )
        for name, payload, allowed in (("model", self.model, _MODEL_FIELDS),
                                       ("train", self.train, _TRAIN_FIELDS),
                                       ("synth", self.synth, _SYNTH_FIELDS)):
            unknown = set(payload) - allowed
            if unknown:
                raise ConfigError(f"unknown {name} fields: {sorted(unknown)}")
        # fail early instead of at first use
        self.model_spec()
        self.train_config()
        self.synth_config()

    # builders -----------------------------------------------------------

    def model_spec(self) -> ModelSpec:
        return ModelSpec(family=self.family, in_steps=self.in_steps,
                         out_steps=self.out_steps, in_channels=self.features,
                         out_channels=4, **self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, device=self.device, **self.train)

    def synth_config(self, seed: int | None = None) -> SynthConfig:
        return SynthConfig(seed=self.seed if seed is None else seed,
                           **self.synth)

    # paths --------------------------------------------------------------

    @property
    def root_path(self) -> Path:
        return Path(self.root)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.root_path / "data"

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return ExperimentConfig(**payload)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @staticmethod
    def load(path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no config file at {path}")
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return ExperimentConfig.from_dict(payload)
