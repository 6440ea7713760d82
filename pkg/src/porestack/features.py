"""Engineered channels, normalization statistics, and training windows.

Three channels are derived from the physical fields: velocity magnitude
`U`, a log-rescaled concentration `Cscaled` mapped onto [0, 1], and a
binary reaction-zone `Filter`.  `Cscaled` and `Filter` are already
bounded by construction, so they are exempt from standardization; all
other input channels are standardized with training-set statistics, and
target channels are min-max mapped to [0, 1] to match the sigmoid output
range of the networks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import PHYSICAL_CHANNELS, Simulation, StateMap
from .errors import DataError

CONCENTRATION_FLOOR = 1e-10
FILTER_C_MIN = 1e-4
FILTER_EPS_MIN = 0.01
FILTER_EPS_MAX = 0.99

# Channels whose construction already bounds them; they bypass standardization.
EXEMPT_CHANNELS = ("Cscaled", "Filter")
# Channels the networks predict, in output order.
TARGET_CHANNELS = PHYSICAL_CHANNELS


def velocity_magnitude(ux: StateMap, uy: StateMap) -> StateMap:
    if ux.shape != uy.shape:
        raise DataError(f"velocity components disagree in shape: {ux.shape} vs {uy.shape}")
    return StateMap(np.hypot(ux.values, uy.values), "U")


def scaled_concentration(c: StateMap, floor: float = CONCENTRATION_FLOOR) -> StateMap:
    """Map concentration onto [0, 1] through a floored log.

    Values at or below the floor map to 0, the upper reference value 1.0
    maps to 1, and the scale is linear in log10 between the two.  This
    spreads the orders of magnitude a dissolution front spans instead of
    letting the near-zero bulk dominate.
    """
    if not 0.0 < floor < 1.0:
        raise DataError(f"concentration floor must be in (0, 1), got {floor}")
    log_floor = np.log10(floor)
    scaled = (np.log10(np.maximum(c.values, floor)) - log_floor) / (0.0 - log_floor)
    return StateMap(scaled, "Cscaled")


def combined_filter(c: StateMap, eps: StateMap) -> StateMap:
    """Binary map of cells that can react: enough solute and mixed-phase porosity."""
    if c.shape != eps.shape:
        raise DataError(f"C and eps disagree in shape: {c.shape} vs {eps.shape}")
    active = (c.values >= FILTER_C_MIN) \
        & (eps.values >= FILTER_EPS_MIN) & (eps.values <= FILTER_EPS_MAX)
    return StateMap(active.astype(c.values.dtype), "Filter")


def engineered_state(state: np.ndarray, channels: tuple[str, ...],
                     floor: float = CONCENTRATION_FLOOR) -> np.ndarray:
    """Append (U, Cscaled, Filter) to one (C, H, W) physical state array."""
    by_name = {name: StateMap(state[k], name) for k, name in enumerate(channels)}
    u = velocity_magnitude(by_name["Ux"], by_name["Uy"])
    cs = scaled_concentration(by_name["C"], floor)
    flt = combined_filter(by_name["C"], by_name["eps"])
    extra = np.stack([u.values, cs.values, flt.values]).astype(state.dtype)
    return np.concatenate([state, extra], axis=0)


def with_engineered_channels(sim: Simulation,
                             floor: float = CONCENTRATION_FLOOR) -> Simulation:
    """Return a copy of `sim` with the three derived channels appended."""
    for name in ("U", "Cscaled", "Filter"):
        if name in sim.channels:
            raise DataError(f"simulation {sim.id!r} already has channel {name!r}")
    states = [engineered_state(s, sim.channels, floor) for s in sim.states]
    return replace(sim, channels=sim.channels + ("U", "Cscaled", "Filter"),
                   states=states)


@dataclass
class NormStats:
    """Training-set normalization statistics.

    `input_mean`/`input_std` standardize input channels (exempt channels
    are passed through unchanged); `output_min`/`output_max` min-max map
    target channels onto [0, 1].  Instances are JSON round-trippable and
    carry a content hash so downstream artifacts can assert they were
    produced under the same normalization.
    """

    input_mean: dict[str, float]
    input_std: dict[str, float]
    output_min: dict[str, float]
    output_max: dict[str, float]
    exempt: tuple[str, ...] = EXEMPT_CHANNELS

    def __post_init__(self) -> None:
        self.exempt = tuple(self.exempt)
        if set(self.input_mean) != set(self.input_std):
            raise DataError("input mean/std channel sets disagree")
        if set(self.output_min) != set(self.output_max):
            raise DataError("output min/max channel sets disagree")
        for name, sd in self.input_std.items():
            if sd <= 0.0 or not np.isfinite(sd):
                raise DataError(f"channel {name!r} has non-positive std {sd!r}")
        for name in self.output_min:
            lo, hi = self.output_min[name], self.output_max[name]
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise DataError(f"channel {name!r} has degenerate range [{lo}, {hi}]")

    def to_json(self) -> str:
        payload = {
            "input_mean": self.input_mean,
            "input_std": self.input_std,
            "output_min": self.output_min,
            "output_max": self.output_max,
            "exempt": list(self.exempt),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "NormStats":
        payload = json.loads(text)
        return NormStats(
            input_mean=dict(payload["input_mean"]),
            input_std=dict(payload["input_std"]),
            output_min=dict(payload["output_min"]),
            output_max=dict(payload["output_max"]),
            exempt=tuple(payload.get("exempt", EXEMPT_CHANNELS)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "NormStats":
        return NormStats.from_json(Path(path).read_text())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def fit_norm_stats(train_sims: Sequence[Simulation]) -> NormStats:
    """Accumulate per-channel statistics over every step of the training set.

    Inputs get mean/std (population) for the physical channels plus `U`;
    targets get min/max for the physical channels.  A constant channel
    cannot be standardized and is rejected.
    """
    if not train_sims:
        raise DataError("cannot fit normalization statistics on an empty training set")
    stat_channels = PHYSICAL_CHANNELS + ("U",)
    acc = {name: [0.0, 0.0, 0] for name in stat_channels}  # sum, sumsq, count
    out_min = {name: np.inf for name in TARGET_CHANNELS}
    out_max = {name: -np.inf for name in TARGET_CHANNELS}
    for sim in train_sims:
        arr = sim.array().astype(np.float64)
        fields = {name: arr[:, sim.channel_index(name)] for name in PHYSICAL_CHANNELS}
        fields["U"] = np.hypot(fields["Ux"], fields["Uy"])
        for name in stat_channels:
            values = fields[name]
            acc[name][0] += float(values.sum())
            acc[name][1] += float(np.square(values).sum())
            acc[name][2] += values.size
        for name in TARGET_CHANNELS:
            out_min[name] = min(out_min[name], float(fields[name].min()))
            out_max[name] = max(out_max[name], float(fields[name].max()))
    mean, std = {}, {}
    for name, (total, total_sq, count) in acc.items():
        mu = total / count
        var = max(total_sq / count - mu * mu, 0.0)
        sd = float(np.sqrt(var))
        if sd == 0.0:
            raise DataError(f"channel {name!r} is constant on the training set")
        mean[name], std[name] = float(mu), sd
    for name in TARGET_CHANNELS:
        if out_max[name] <= out_min[name]:
            raise DataError(f"target channel {name!r} is constant on the training set")
    return NormStats(mean, std, out_min, out_max)


def normalize_inputs(window: np.ndarray, channels: Sequence[str],
                     stats: NormStats) -> np.ndarray:
    """Standardize a (T, C, H, W) input block channel by channel.

    Exempt channels pass through unchanged; every other channel must have
    fitted statistics.
    """
    if window.ndim != 4 or window.shape[1] != len(channels):
        raise DataError(
            f"expected (T, {len(channels)}, H, W) input block, got {window.shape}"
        )
    out = np.empty_like(window, dtype=np.float32)
    for k, name in enumerate(channels):
        if name in stats.exempt:
            out[:, k] = window[:, k]
            continue
        if name not in stats.input_mean:
            raise DataError(f"no input statistics for channel {name!r}")
        out[:, k] = (window[:, k] - stats.input_mean[name]) / stats.input_std[name]
    return out


def normalize_outputs(window: np.ndarray, stats: NormStats,
                      channels: Sequence[str] = TARGET_CHANNELS) -> np.ndarray:
    """Min-max map a (T, C, H, W) target block onto the unit interval."""
    if window.ndim != 4 or window.shape[1] != len(channels):
        raise DataError(
            f"expected (T, {len(channels)}, H, W) target block, got {window.shape}"
        )
    out = np.empty_like(window, dtype=np.float32)
    for k, name in enumerate(channels):
        if name not in stats.output_min:
            raise DataError(f"no output statistics for channel {name!r}")
        lo, hi = stats.output_min[name], stats.output_max[name]
        out[:, k] = (window[:, k] - lo) / (hi - lo)
    return out


def denormalize_outputs(window: np.ndarray, stats: NormStats,
                        channels: Sequence[str] = TARGET_CHANNELS) -> np.ndarray:
    """Exact inverse of `normalize_outputs`; never clamps.

    Predictions slightly outside the training envelope stay outside, so
    downstream consumers see what the network actually produced.
    """
    if window.ndim != 4 or window.shape[1] != len(channels):
        raise DataError(
            f"expected (T, {len(channels)}, H, W) block, got {window.shape}"
        )
    out = np.empty_like(window, dtype=np.float32)
    for k, name in enumerate(channels):
        if name not in stats.output_min:
            raise DataError(f"no output statistics for channel {name!r}")
        lo, hi = stats.output_min[name], stats.output_max[name]
        out[:, k] = window[:, k] * (hi - lo) + lo
    return out


@dataclass
class Window:
    """One training example: `m` input steps and the `n` steps that follow."""

    sim_id: str
    t: int  # index of the last input step within the source trajectory
    inputs: np.ndarray   # (m, C, H, W), raw physical/engineered values
    targets: np.ndarray  # (n, C_target, H, W), raw physical values


def make_windows(sim: Simulation, in_steps: int, out_steps: int,
                 stride: int = 1) -> list[Window]:
    """Slice a trajectory into overlapping (inputs, targets) windows.

    Anchors advance by `stride`; with stride 1 a trajectory of N steps
    yields N - in_steps - out_steps + 1 windows.  Targets always hold the
    physical channels only.
    """
    if in_steps < 1 or out_steps < 1 or stride < 1:
        raise DataError("in_steps, out_steps, and stride must be positive")
    n = sim.n_steps
    if n < in_steps + out_steps:
        raise DataError(
            f"simulation {sim.id!r} has {n} steps, needs at least "
            f"{in_steps + out_steps} for {in_steps}+{out_steps} windows"
        )
    arr = sim.array()
    target_idx = [sim.channel_index(c) for c in TARGET_CHANNELS]
    windows = []
    for t in range(in_steps - 1, n - out_steps, stride):
        inputs = arr[t - in_steps + 1:t + 1]
        targets = arr[t + 1:t + 1 + out_steps][:, target_idx]
        windows.append(Window(sim.id, t, inputs, targets))
    return windows


def windows_for(sims: Iterable[Simulation], in_steps: int, out_steps: int,
                stride: int = 1) -> list[Window]:
    out: list[Window] = []
    for sim in sims:
        out.extend(make_windows(sim, in_steps, out_steps, stride))
    return out
