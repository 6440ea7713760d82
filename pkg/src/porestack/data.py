"""Core data model: state maps, simulations, ensembles.

A simulation is an evenly sampled trajectory of multi-channel 2-D state
maps on a fixed grid.  The four physical channels are concentration `C`,
porosity `eps`, and the velocity components `Ux` and `Uy`; engineered
channels may be appended on top of those.  Steps are stored as individual
(channels, height, width) arrays so that a structurally broken trajectory
can still be loaded and reported on instead of crashing at pack time.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

PHYSICAL_CHANNELS = ("C", "eps", "Ux", "Uy")
ENGINEERED_CHANNELS = ("U", "Cscaled", "Filter")
KNOWN_CHANNELS = PHYSICAL_CHANNELS + ENGINEERED_CHANNELS

TRAIN = "train"
VALIDATION = "validation"


@dataclass
class StateMap:
    """One 2-D field on the simulation grid, tagged with its channel name."""

    values: np.ndarray
    channel: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DataError(
                f"state map must be 2-D with positive extents, got shape {self.values.shape}"
            )
        if self.channel not in KNOWN_CHANNELS:
            raise DataError(f"unknown channel name {self.channel!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass
class Simulation:
    """A single trajectory: a list of per-step (channels, H, W) arrays.

    `states[t]` holds every channel of step `t`.  The channel tuple gives
    the meaning of axis 0.  `dt_index` is the integer stride between
    recorded steps; physical time never appears in this layer.
    """

    id: str
    channels: tuple[str, ...]
    states: list[np.ndarray]
    dt_index: int = 1

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("simulation id must be non-empty")
        self.channels = tuple(self.channels)
        for name in self.channels:
            if name not in KNOWN_CHANNELS:
                raise DataError(f"unknown channel name {name!r}")
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate channel names")
        if self.dt_index < 1:
            raise DataError("dt_index must be a positive integer")
        if not self.states:
            raise DataError("simulation must contain at least one step")
        self.states = [np.asarray(s) for s in self.states]

    @property
    def n_steps(self) -> int:
        return len(self.states)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """(H, W) of the first step; validation reports per-step deviations."""
        return self.states[0].shape[-2:]  # type: ignore[return-value]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise DataError(f"simulation {self.id!r} has no channel {name!r}") from None

    def state_map(self, step: int, channel: str) -> StateMap:
        return StateMap(self.states[step][self.channel_index(channel)], channel)

    def array(self) -> np.ndarray:
        """Pack all steps into one (N, C, H, W) array.

        Raises DataError when steps disagree in shape, since a ragged
        trajectory has no array form.
        """
        ref = self.states[0].shape
        if len(ref) != 3 or ref[0] != len(self.channels):
            raise DataError(
                f"simulation {self.id!r}: step 0 has shape {ref}, expected "
                f"({len(self.channels)}, H, W)"
            )
        for t, s in enumerate(self.states):
            if s.shape != ref:
                raise DataError(
                    f"simulation {self.id!r}: step {t} has shape {s.shape}, "
                    f"expected {ref}"
                )
        return np.stack(self.states, axis=0)

    def maps(self, channel: str) -> np.ndarray:
        """All steps of one channel as an (N, H, W) array."""
        idx = self.channel_index(channel)
        return self.array()[:, idx]

    @staticmethod
    def from_array(sim_id: str, values: np.ndarray, channels: tuple[str, ...],
                   dt_index: int = 1) -> "Simulation":
        values = np.asarray(values)
        if values.ndim != 4 or values.shape[1] != len(channels):
            raise DataError(
                f"expected (N, {len(channels)}, H, W) array, got shape {values.shape}"
            )
        return Simulation(sim_id, tuple(channels), list(values), dt_index)


@dataclass
class ValidationIssue:
    """One problem found in a trajectory, located as precisely as possible."""

    kind: str
    message: str
    step: int | None = None
    channel: str | None = None

    def __str__(self) -> str:
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.channel is not None:
            where.append(f"channel {self.channel}")
        loc = " at " + ", ".join(where) if where else ""
        return f"[{self.kind}]{loc}: {self.message}"


@dataclass
class ValidationReport:
    sim_id: str
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, message: str, step: int | None = None,
            channel: str | None = None) -> None:
        self.issues.append(ValidationIssue(kind, message, step, channel))

    def summary(self) -> str:
        if self.ok:
            return f"{self.sim_id}: ok"
        lines = [f"{self.sim_id}: {len(self.issues)} issue(s)"]
        lines += [f"  {issue}" for issue in self.issues]
        return "\n".join(lines)


def _first_bad(mask: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(mask))
    return np.unravel_index(flat, mask.shape)  # type: ignore[return-value]


def validate_simulation(sim: Simulation) -> ValidationReport:
    """Check structural and physical consistency of a trajectory.

    Reports, per step: wrong array rank or channel count, grid shape
    deviating from step 0, non-finite values, porosity outside [0, 1],
    and non-binary filter maps.  Always returns a report; never raises.
    """
    report = ValidationReport(sim.id)
    ref_shape = sim.states[0].shape
    n_channels = len(sim.channels)
    for t, state in enumerate(sim.states):
        if state.ndim != 3:
            report.add("shape", f"step array has rank {state.ndim}, expected 3", step=t)
            continue
        if state.shape[0] != n_channels:
            report.add(
                "channel-count",
                f"step has {state.shape[0]} channels, expected {n_channels}",
                step=t,
            )
            continue
        if state.shape != ref_shape:
            report.add(
                "shape",
                f"step has shape {state.shape}, step 0 has {ref_shape}",
                step=t,
            )
            continue
        for c, name in enumerate(sim.channels):
            values = state[c]
            bad = ~np.isfinite(values)
            if bad.any():
                i, j = _first_bad(bad)
                report.add(
                    "non-finite",
                    f"{int(bad.sum())} non-finite value(s), first at ({i}, {j})",
                    step=t, channel=name,
                )
                continue
            if name == "eps":
                out = (values < 0.0) | (values > 1.0)
                if out.any():
                    i, j = _first_bad(out)
                    report.add(
                        "eps-range",
                        f"{int(out.sum())} value(s) outside [0, 1], first at "
                        f"({i}, {j}) = {values[i, j]!r}",
                        step=t, channel=name,
                    )
            if name == "Filter":
                nb = (values != 0.0) & (values != 1.0)
                if nb.any():
                    i, j = _first_bad(nb)
                    report.add(
                        "filter-binary",
                        f"{int(nb.sum())} non-binary value(s), first at ({i}, {j})",
                        step=t, channel=name,
                    )
    return report


def crop_borders(sim: Simulation, target_h: int, target_w: int) -> Simulation:
    """Crop every step to a centered (target_h, target_w) window.

    The margin on each side must be non-negative and symmetric, i.e. the
    difference in each dimension must be even.  Interior values are
    preserved bit-exactly.
    """
    h, w = sim.grid_shape
    dh, dw = h - target_h, w - target_w
    if dh < 0 or dw < 0:
        raise DataError(
            f"cannot crop {h}x{w} grid to larger target {target_h}x{target_w}"
        )
    if dh % 2 or dw % 2:
        raise DataError(
            f"crop from {h}x{w} to {target_h}x{target_w} requires even margins"
        )
    top, left = dh // 2, dw // 2
    states = [
        np.ascontiguousarray(s[:, top:top + target_h, left:left + target_w])
        for s in sim.states
    ]
    return replace(sim, states=states)


@dataclass
class Ensemble:
    """A set of simulations plus an optional train/validation assignment."""

    simulations: list[Simulation]
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [sim.id for sim in self.simulations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate simulation ids in ensemble")
        for sim_id, part in self.split.items():
            if sim_id not in ids:
                raise DataError(f"split references unknown simulation {sim_id!r}")
            if part not in (TRAIN, VALIDATION):
                raise DataError(f"unknown split label {part!r}")

    def __len__(self) -> int:
        return len(self.simulations)

    def get(self, sim_id: str) -> Simulation:
        for sim in self.simulations:
            if sim.id == sim_id:
                return sim
        raise DataError(f"ensemble has no simulation {sim_id!r}")

    def subset(self, part: str) -> list[Simulation]:
        if set(self.split) != {sim.id for sim in self.simulations}:
            raise DataError("ensemble has no complete train/validation split")
        return [sim for sim in self.simulations if self.split[sim.id] == part]

    def train(self) -> list[Simulation]:
        return self.subset(TRAIN)

    def validation(self) -> list[Simulation]:
        return self.subset(VALIDATION)


def split_ensemble(ensemble: Ensemble, train_count: int, seed: int) -> Ensemble:
    """Assign members to train/validation by a seeded uniform shuffle.

    The assignment is a pure function of the sorted member ids, the
    requested train count, and the seed; it does not depend on the order
    simulations happen to be stored in.
    """
    n = len(ensemble.simulations)
    if not 0 < train_count < n:
        raise DataError(
            f"train_count must be in (0, {n}) for an ensemble of {n}, got {train_count}"
        )
    ids = sorted(sim.id for sim in ensemble.simulations)
    perm = np.random.default_rng(seed).permutation(len(ids))
    chosen = {ids[k] for k in perm[:train_count]}
    split = {i: (TRAIN if i in chosen else VALIDATION) for i in ids}
    return Ensemble(ensemble.simulations, split)
