"""Iterative trajectory forecasting with a trained stack.

A rollout seeds the predictor with the first m ground-truth physical
maps, then repeatedly predicts the next n maps and feeds the final
corrected prediction back as the next input window.  Engineered input
channels are recomputed from predicted physical fields at every
iteration, never copied from ground truth, so prediction error
propagates exactly as it would in deployment.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .data import PHYSICAL_CHANNELS, Simulation
from .errors import DataError
from .features import (CONCENTRATION_FLOOR, NormStats, denormalize_outputs,
                       engineered_state, normalize_inputs)
from .stacking import StackedModel, input_channels_for, stack_refine

TRUTH = "truth"
PREDICTED = "predicted"
ROLLOUT_SIDECAR = "rollout.json"


def num_iterations(total_steps: int, out_steps: int) -> int:
    """Number of prediction blocks that fit a trajectory of `total_steps`.

    The first block consumes the seed window, hence the minus one; a
    trajectory shorter than two blocks cannot be rolled out at all.
    """
    if out_steps < 1:
        raise DataError("out_steps must be positive")
    iterations = total_steps // out_steps - 1
    if iterations < 1:
        raise DataError(
            f"trajectory of {total_steps} steps is too short to roll out "
            f"{out_steps}-step blocks"
        )
    return iterations


class Predictor(Protocol):
    """Maps m physical maps to the next n physical maps."""

    in_steps: int
    out_steps: int

    def predict(self, window: np.ndarray, start_step: int) -> np.ndarray: ...


class StackPredictor:
    """Adapter from a trained stack to physical-unit windows.

    Handles feature engineering (when the stack consumes 7 channels),
    normalization, refinement through every level, and denormalization.
    """

    def __init__(self, stack: StackedModel, stats: NormStats,
                 device: str = "cpu",
                 concentration_floor: float = CONCENTRATION_FLOOR):
        if stats.content_hash() != stack.stats_hash:
            raise DataError(
                "normalization statistics do not match the ones the stack "
                "was trained under"
            )
        self.stack = stack.to(device)
        self.stats = stats
        self.device = device
        self.floor = concentration_floor
        self.in_steps = stack.spec.in_steps
        self.out_steps = stack.spec.out_steps
        self.in_channels = stack.spec.in_channels
        self.channels = input_channels_for(self.in_channels)

    def predict(self, window: np.ndarray, start_step: int) -> np.ndarray:
        if window.ndim != 4 or window.shape[:2] != (self.in_steps,
                                                    len(PHYSICAL_CHANNELS)):
            raise DataError(
                f"expected ({self.in_steps}, 4, H, W) physical window, "
                f"got {window.shape}"
            )
        if self.in_channels == 7:
            window = np.stack([
                engineered_state(step, PHYSICAL_CHANNELS, self.floor)
                for step in window
            ])
        x = normalize_inputs(window.astype(np.float32), self.channels, self.stats)
        batch = torch.from_numpy(x).unsqueeze(0).to(self.device)
        y = stack_refine(self.stack, batch)[0].cpu().numpy()
        return denormalize_outputs(y, self.stats)


@dataclass
class RolloutResult:
    """A forecast trajectory aligned step-by-step with its source."""

    sim_id: str
    channels: tuple[str, ...]
    states: np.ndarray                 # (S, 4, H, W) float32
    provenance: list[str]              # one TRUTH/PREDICTED tag per step
    anchors: list[int]                 # first step index of each block
    forward_seconds: list[float]       # one entry per predictor call
    wall_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.provenance) != len(self.states):
            raise DataError("one provenance tag per step required")
        bad = set(self.provenance) - {TRUTH, PREDICTED}
        if bad:
            raise DataError(f"unknown provenance tags {sorted(bad)}")

    @property
    def predicted_steps(self) -> list[int]:
        return [k for k, tag in enumerate(self.provenance) if tag == PREDICTED]

    def to_simulation(self) -> Simulation:
        return Simulation(self.sim_id, self.channels, list(self.states))


def rollout(predictor: Predictor, sim: Simulation) -> RolloutResult:
    """Roll the predictor along one trajectory.

    The seed is the first `in_steps` ground-truth physical maps; each of
    the following blocks is predicted from the previous block's output.
    Requires in_steps == out_steps, since the full predicted block is
    what gets fed back.
    """
    m, n = predictor.in_steps, predictor.out_steps
    if m != n:
        raise DataError(
            f"iterative rollout needs matching window sizes, got {m} in, {n} out"
        )
    iterations = num_iterations(sim.n_steps, n)
    arr = sim.array()
    idx = [sim.channel_index(c) for c in PHYSICAL_CHANNELS]
    phys = arr[:, idx].astype(np.float32)

    started = time.perf_counter()
    blocks = [phys[:m]]
    provenance = [TRUTH] * m
    anchors = []
    forward_seconds = []
    window = phys[:m]
    for k in range(iterations):
        t0 = time.perf_counter()
        pred = predictor.predict(window, m + k * n)
        forward_seconds.append(time.perf_counter() - t0)
        if pred.shape != (n,) + phys.shape[1:]:
            raise DataError(
                f"predictor returned {pred.shape}, expected {(n,) + phys.shape[1:]}"
            )
        anchors.append(m + k * n)
        blocks.append(pred.astype(np.float32))
        provenance.extend([PREDICTED] * n)
        window = pred[-m:]
    return RolloutResult(
        sim_id=sim.id,
        channels=PHYSICAL_CHANNELS,
        states=np.concatenate(blocks),
        provenance=provenance,
        anchors=anchors,
        forward_seconds=forward_seconds,
        wall_seconds=time.perf_counter() - started,
    )


def save_rollout(result: RolloutResult, out_dir: str | Path) -> Path:
    from .storage import write_simulation

    out_dir = Path(out_dir)
    write_simulation(result.to_simulation(), out_dir)
    sidecar = {
        "sim_id": result.sim_id,
        "provenance": result.provenance,
        "anchors": result.anchors,
        "forward_seconds": result.forward_seconds,
        "wall_seconds": result.wall_seconds,
        "meta": result.meta,
    }
    with open(out_dir / ROLLOUT_SIDECAR, "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    return out_dir


def read_rollout(rollout_dir: str | Path) -> RolloutResult:
    from .storage import read_simulation

    rollout_dir = Path(rollout_dir)
    sidecar_path = rollout_dir / ROLLOUT_SIDECAR
    if not sidecar_path.is_file():
        raise DataError(f"no {ROLLOUT_SIDECAR} in {rollout_dir}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    sim = read_simulation(rollout_dir)
    return RolloutResult(
        sim_id=sidecar["sim_id"],
        channels=sim.channels,
        states=sim.array(),
        provenance=list(sidecar["provenance"]),
        anchors=list(sidecar["anchors"]),
        forward_seconds=list(sidecar["forward_seconds"]),
        wall_seconds=float(sidecar.get("wall_seconds", 0.0)),
        meta=dict(sidecar.get("meta", {})),
    )
