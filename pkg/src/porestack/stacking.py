"""Training of the base forecaster and its stacked correction levels.

Level 0 learns windows of normalized ground truth.  Each correction
level k >= 1 is a fresh network of the same family that consumes the
output of the frozen levels 0..k-1 (computed on teacher-forced ground
truth inputs) and is trained against the same normalized targets.
Because a correction level trains from a materialized level dataset,
the earlier checkpoints are never touched, which keeps them frozen by
construction rather than by convention.

All tensors in this module live in normalized space: inputs are
standardized (exempt channels passed through), targets min-max mapped
to [0, 1].
"""
from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import ENGINEERED_CHANNELS, PHYSICAL_CHANNELS
from .errors import DataError, TrainingError
from .features import NormStats, Window, normalize_inputs, normalize_outputs
from .models import (Checkpoint, ModelSpec, build_model, load_checkpoint,
                     mse_loss, save_checkpoint, tau_loss)

STACK_MANIFEST = "stack.json"
STACK_FORMAT = "porestack-stack"


@dataclass
class TrainConfig:
    """Optimizer and schedule settings shared by every level."""

    lr: float = 5e-4
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise TrainingError("lr, batch_size, and max_epochs must be positive")
        if self.patience < 1:
            raise TrainingError("patience must be positive")


def input_channels_for(count: int) -> tuple[str, ...]:
    """Canonical channel order for a 4- or 7-channel input window."""
    if count == 4:
        return PHYSICAL_CHANNELS
    if count == 7:
        return PHYSICAL_CHANNELS + ENGINEERED_CHANNELS
    raise DataError(f"input windows must have 4 or 7 channels, got {count}")


def window_tensors(windows: Sequence[Window], stats: NormStats
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalize a window list into (inputs, targets) float32 tensors."""
    if not windows:
        raise TrainingError("empty window list")
    channels = input_channels_for(windows[0].inputs.shape[1])
    xs = np.stack([normalize_inputs(w.inputs, channels, stats) for w in windows])
    ys = np.stack([normalize_outputs(w.targets, stats) for w in windows])
    return torch.from_numpy(xs), torch.from_numpy(ys)


def _objective(spec: ModelSpec):
    """Per-family training objective.

    Returns a function mapping (pred, target) to (tensor to optimize,
    total per-batch value for per-sample bookkeeping).  The difference-
    regularized loss is summed over the batch, plain MSE is a mean, so
    the bookkeeping scales them onto a common per-sample footing.
    """
    if spec.family == "tau":
        def fn(pred, target):
            loss = tau_loss(pred, target, spec.alpha, spec.kl_direction)
            return loss, float(loss.detach())
    else:
        def fn(pred, target):
            loss = mse_loss(pred, target)
            return loss, float(loss.detach()) * pred.shape[0]
    return fn


def _epoch_batches(count: int, batch_size: int,
                   generator: torch.Generator) -> list[torch.Tensor]:
    perm = torch.randperm(count, generator=generator)
    return [perm[k:k + batch_size] for k in range(0, count, batch_size)]


def train_model(spec: ModelSpec, x_train: torch.Tensor, y_train: torch.Tensor,
                x_val: torch.Tensor, y_val: torch.Tensor, cfg: TrainConfig,
                stats_hash: str, level: int = 0) -> Checkpoint:
    """Train one network with Adam and patience-based early stopping.

    The checkpoint keeps the weights of the best validation epoch and a
    log entry per epoch.  Deterministic for fixed seed and device.
    """
    if len(x_train) == 0:
        raise TrainingError("training set is empty")
    if len(x_val) == 0:
        raise TrainingError("validation set is empty")
    device = torch.device(cfg.device)
    torch.manual_seed(cfg.seed)
    model = build_model(spec).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                                 betas=(cfg.beta1, cfg.beta2))
    objective = _objective(spec)
    generator = torch.Generator().manual_seed(cfg.seed)

    best_val = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    bad_epochs = 0
    log: list[dict] = []
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        model.train()
        train_total = 0.0
        for idx in _epoch_batches(len(x_train), cfg.batch_size, generator):
            x = x_train[idx].to(device)
            y = y_train[idx].to(device)
            optimizer.zero_grad()
            loss, total = objective(model(x), y)
            loss.backward()
            optimizer.step()
            train_total += total
        model.eval()
        val_total = 0.0
        with torch.no_grad():
            for k in range(0, len(x_val), cfg.batch_size):
                x = x_val[k:k + cfg.batch_size].to(device)
                y = y_val[k:k + cfg.batch_size].to(device)
                _, total = objective(model(x), y)
                val_total += total
        train_loss = train_total / len(x_train)
        val_loss = val_total / len(x_val)
        log.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "seconds": time.perf_counter() - started,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    best_state = {k: v.cpu() for k, v in best_state.items()}
    return Checkpoint(spec=spec, state_dict=best_state, stats_hash=stats_hash,
                      level=level, log=log, seed=cfg.seed)


def train_level0(spec: ModelSpec, train_windows: Sequence[Window],
                 val_windows: Sequence[Window], stats: NormStats,
                 cfg: TrainConfig) -> Checkpoint:
    """Train the base forecaster on normalized ground-truth windows."""
    x_train, y_train = window_tensors(train_windows, stats)
    x_val, y_val = window_tensors(val_windows, stats)
    if x_train.shape[2] != spec.in_channels:
        raise TrainingError(
            f"windows have {x_train.shape[2]} channels, spec expects {spec.in_channels}"
        )
    return train_model(spec, x_train, y_train, x_val, y_val, cfg,
                       stats_hash=stats.content_hash(), level=0)


@dataclass
class StackedModel:
    """An ordered list of checkpoints: level 0 plus correction levels."""

    checkpoints: list[Checkpoint]

    def __post_init__(self) -> None:
        if not self.checkpoints:
            raise TrainingError("a stack needs at least the level-0 checkpoint")
        base = self.checkpoints[0].spec
        for k, ck in enumerate(self.checkpoints):
            if ck.level != k:
                raise TrainingError(
                    f"checkpoint at position {k} is labeled level {ck.level}"
                )
            if ck.stats_hash != self.checkpoints[0].stats_hash:
                raise TrainingError("stack levels trained under different statistics")
            if ck.spec.family != base.family:
                raise TrainingError("stack levels mix model families")
            if k > 0:
                expected = base.correction_spec()
                if (ck.spec.in_channels, ck.spec.in_steps) != (
                        expected.in_channels, expected.in_steps):
                    raise TrainingError(
                        f"level {k} spec does not consume level-{k - 1} output"
                    )
            if ck.spec.out_channels != base.out_channels \
                    or ck.spec.out_steps != base.out_steps:
                raise TrainingError("stack levels disagree on output shape")
        self._models = [ck.build() for ck in self.checkpoints]

    @property
    def levels(self) -> int:
        """Number of correction levels (total networks minus one)."""
        return len(self.checkpoints) - 1

    @property
    def stats_hash(self) -> str:
        return self.checkpoints[0].stats_hash

    @property
    def spec(self) -> ModelSpec:
        return self.checkpoints[0].spec

    def models(self) -> list[torch.nn.Module]:
        return self._models

    def to(self, device: str | torch.device) -> "StackedModel":
        for model in self._models:
            model.to(device)
        return self


def stack_refine(stack: StackedModel, x: torch.Tensor,
                 trace: list[torch.Tensor] | None = None) -> torch.Tensor:
    """Run the base network and every correction level once, in order.

    `x` is a normalized (B, m, C_in, H, W) batch; the result is the final
    level's (B, n, C_out, H, W) output.  When `trace` is given, each
    level's output is appended to it.
    """
    if x.ndim != 5:
        raise DataError(f"expected (B, m, C, H, W) input, got {tuple(x.shape)}")
    if x.shape[2] != stack.spec.in_channels:
        raise DataError(
            f"input has {x.shape[2]} channels, stack expects {stack.spec.in_channels}"
        )
    y = x
    with torch.no_grad():
        for model in stack.models():
            y = model(y)
            if trace is not None:
                trace.append(y)
    return y


@dataclass
class LevelDataset:
    """Materialized training pairs for one correction level.

    `predictions` are the outputs of the first `prefix_levels` networks
    on teacher-forced ground-truth windows; `targets` are the matching
    normalized truths.  `anchors` keeps the (sim id, anchor step) of
    every row, in order, so each row maps back to exactly one source
    window.
    """

    prefix_levels: int
    anchors: list[tuple[str, int]]
    predictions: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        if self.predictions.shape != self.targets.shape:
            raise DataError("predictions and targets disagree in shape")
        if len(self.anchors) != len(self.predictions):
            raise DataError("one anchor per row required")
        if self.prefix_levels < 1:
            raise DataError("a level dataset needs at least the level-0 prefix")


def build_level_dataset(stack: StackedModel, windows: Sequence[Window],
                        stats: NormStats, batch_size: int = 8,
                        device: str = "cpu") -> LevelDataset:
    """Run the stack prefix over ground-truth windows and collect pairs."""
    if stats.content_hash() != stack.stats_hash:
        raise TrainingError("stack was trained under different statistics")
    x, y = window_tensors(windows, stats)
    stack.to(device)
    preds = []
    with torch.no_grad():
        for k in range(0, len(x), batch_size):
            preds.append(stack_refine(stack, x[k:k + batch_size].to(device)).cpu())
    predictions = torch.cat(preds).numpy()
    anchors = [(w.sim_id, w.t) for w in windows]
    return LevelDataset(
        prefix_levels=len(stack.checkpoints),
        anchors=anchors,
        predictions=predictions,
        targets=y.numpy(),
    )


def train_correction_level(level: int, train_ds: LevelDataset,
                           val_ds: LevelDataset, base_spec: ModelSpec,
                           cfg: TrainConfig, stats_hash: str) -> Checkpoint:
    """Train correction level `level` on a materialized level dataset.

    The dataset must have been produced by exactly the `level` preceding
    networks; nothing here touches those networks, so they stay frozen.
    """
    if level < 1:
        raise TrainingError("correction levels start at 1")
    for name, ds in (("train", train_ds), ("validation", val_ds)):
        if ds.prefix_levels != level:
            raise TrainingError(
                f"{name} dataset was built from {ds.prefix_levels} level(s), "
                f"cannot train level {level}"
            )
    spec = base_spec.correction_spec()
    return train_model(
        spec,
        torch.from_numpy(train_ds.predictions), torch.from_numpy(train_ds.targets),
        torch.from_numpy(val_ds.predictions), torch.from_numpy(val_ds.targets),
        cfg, stats_hash=stats_hash, level=level,
    )


def save_stack(stack: StackedModel, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files, hashes = [], []
    for k, ck in enumerate(stack.checkpoints):
        name = f"level_{k:02d}.pt"
        save_checkpoint(ck, out_dir / name)
        files.append(name)
        hashes.append(ck.content_hash())
    manifest = {
        "format": STACK_FORMAT,
        "family": stack.spec.family,
        "stats_hash": stack.stats_hash,
        "files": files,
        "hashes": hashes,
    }
    with open(out_dir / STACK_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return out_dir


def load_stack(stack_dir: str | Path) -> StackedModel:
    stack_dir = Path(stack_dir)
    manifest_path = stack_dir / STACK_MANIFEST
    if not manifest_path.is_file():
        raise TrainingError(f"no {STACK_MANIFEST} in {stack_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != STACK_FORMAT:
        raise TrainingError(f"{manifest_path} is not a stack manifest")
    checkpoints = []
    for name, expected in zip(manifest["files"], manifest["hashes"]):
        ck = load_checkpoint(stack_dir / name)
        if ck.content_hash() != expected:
            raise TrainingError(f"{name}: weights differ from the stack manifest")
        checkpoints.append(ck)
    return StackedModel(checkpoints)
