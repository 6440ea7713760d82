"""Model specification, construction, and checkpoint IO.

A ModelSpec pins everything needed to rebuild a network architecture;
checkpoints bundle a spec with trained weights, the hash of the
normalization statistics they were trained under, the correction level
they belong to, and the per-epoch training log.  Checkpoint identity is
a content hash over the spec and the raw weight bytes, so "two files
hold the same trained model" is a checkable statement.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch

from ..errors import ConfigError, TrainingError
from .convlstm import ConvLSTMForecaster
from .tau import TAUForecaster
from .ufno import UFNOForecaster

FAMILIES = ("convlstm", "ufno", "tau")
CHECKPOINT_FORMAT = "porestack-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description sufficient to rebuild a forecaster."""

    family: str = "convlstm"
    in_steps: int = 5
    out_steps: int = 5
    in_channels: int = 7
    out_channels: int = 4
    # convlstm
    hidden_channels: int = 16
    num_layers: int = 2
    kernel_size: int = 3
    # ufno
    width: int = 24
    modes: int = 8
    fourier_layers: int = 2
    ufourier_layers: int = 2
    # tau
    hidden_spatial: int = 16
    hidden_temporal: int = 64
    blocks: int = 4
    attention_kernel: int = 11
    # loss
    alpha: float = 0.1
    kl_direction: str = "true-to-pred"

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        for name in ("in_steps", "out_steps", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.in_channels not in (4, 7):
            raise ConfigError("in_channels must be 4 (physical) or 7 (with engineered)")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be non-negative")

    def correction_spec(self) -> "ModelSpec":
        """Spec for a correction level: consumes the 4-channel prediction."""
        return replace(self, in_channels=self.out_channels,
                       in_steps=self.out_steps)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: dict) -> "ModelSpec":
        return ModelSpec(**payload)


def build_model(spec: ModelSpec) -> torch.nn.Module:
    if spec.family == "convlstm":
        return ConvLSTMForecaster(
            spec.in_channels, spec.out_channels, spec.out_steps,
            hidden_channels=spec.hidden_channels, num_layers=spec.num_layers,
            kernel_size=spec.kernel_size,
        )
    if spec.family == "ufno":
        return UFNOForecaster(
            spec.in_channels, spec.out_channels, spec.in_steps, spec.out_steps,
            width=spec.width, modes=spec.modes,
            fourier_layers=spec.fourier_layers,
            ufourier_layers=spec.ufourier_layers,
        )
    return TAUForecaster(
        spec.in_channels, spec.out_channels, spec.in_steps, spec.out_steps,
        hidden_spatial=spec.hidden_spatial, hidden_temporal=spec.hidden_temporal,
        blocks=spec.blocks, kernel_size=spec.attention_kernel,
    )


def parameter_count(model: torch.nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


@dataclass
class Checkpoint:
    """A trained model: spec, weights, provenance, and training log."""

    spec: ModelSpec
    state_dict: dict[str, torch.Tensor]
    stats_hash: str
    level: int = 0
    log: list[dict] = field(default_factory=list)
    seed: int | None = None

    def build(self) -> torch.nn.Module:
        model = build_model(self.spec)
        try:
            model.load_state_dict(self.state_dict)
        except RuntimeError as exc:
            raise TrainingError(f"checkpoint weights do not fit spec: {exc}") from exc
        model.eval()
        return model

    def content_hash(self) -> str:
        return checkpoint_hash(self.spec, self.state_dict)


def checkpoint_hash(spec: ModelSpec, state_dict: dict[str, torch.Tensor]) -> str:
    """sha256 over the spec and the weight tensors themselves.

    Hashing tensor bytes (in sorted key order, with shapes and dtypes)
    rather than a serialized file makes the hash stable across torch
    serialization details.
    """
    digest = hashlib.sha256()
    digest.update(json.dumps(spec.to_dict(), sort_keys=True).encode())
    for key in sorted(state_dict):
        tensor = state_dict[key].detach().cpu().contiguous()
        digest.update(key.encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(json.dumps(list(tensor.shape)).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": checkpoint.spec.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in checkpoint.state_dict.items()},
        "stats_hash": checkpoint.stats_hash,
        "level": checkpoint.level,
        "log": checkpoint.log,
        "seed": checkpoint.seed,
        "content_hash": checkpoint.content_hash(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise TrainingError(f"checkpoint {path} not found")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path} is not a recognized checkpoint file")
    checkpoint = Checkpoint(
        spec=ModelSpec.from_dict(payload["spec"]),
        state_dict=payload["state_dict"],
        stats_hash=payload["stats_hash"],
        level=int(payload["level"]),
        log=list(payload["log"]),
        seed=payload.get("seed"),
    )
    stored = payload.get("content_hash")
    if stored and stored != checkpoint.content_hash():
        raise TrainingError(f"{path}: content hash mismatch, file corrupted")
    return checkpoint
