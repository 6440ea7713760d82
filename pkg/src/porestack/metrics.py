"""Map-level accuracy metrics and per-step evaluation curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import PHYSICAL_CHANNELS, Simulation, StateMap
from .errors import DataError
from .rollout import PREDICTED, RolloutResult

METRICS = ("pcc", "mse")


def _values(x) -> np.ndarray:
    arr = x.values if isinstance(x, StateMap) else np.asarray(x)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D map, got shape {arr.shape}")
    return arr.astype(np.float64)


def pcc(pred, truth) -> float:
    """Pearson correlation between two maps.

    Returns NaN when either map is constant, since correlation is
    undefined there; callers exclude NaNs from averages rather than
    substituting a value.
    """
    a, b = _values(pred), _values(truth)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    var_a, var_b = float((da * da).sum()), float((db * db).sum())
    if var_a == 0.0 or var_b == 0.0:
        return float("nan")
    return float((da * db).sum() / np.sqrt(var_a * var_b))


def mse_map(pred, truth) -> float:
    a, b = _values(pred), _values(truth)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def difference_map(pred: StateMap, truth: StateMap) -> StateMap:
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return StateMap(pred.values - truth.values, pred.channel)


@dataclass
class MetricCurve:
    """One metric for one channel along predicted steps, averaged over samples.

    `counts[k]` records how many samples actually contributed at step
    `steps[k]`; PCC entries flagged NaN (constant maps) are excluded
    from both the average and the count.
    """

    metric: str
    channel: str
    steps: list[int]
    values: np.ndarray
    counts: np.ndarray


def _paired_steps(results: Sequence[RolloutResult],
                  truths: Sequence[Simulation]) -> list[int]:
    if len(results) != len(truths):
        raise DataError("need one truth per rollout result")
    if not results:
        raise DataError("no rollout results to evaluate")
    ref = results[0].predicted_steps
    for res, truth in zip(results, truths):
        if res.sim_id != truth.id:
            raise DataError(
                f"result {res.sim_id!r} paired with truth {truth.id!r}"
            )
        if res.predicted_steps != ref:
            raise DataError("rollout results disagree on predicted steps")
        if truth.n_steps < len(res.provenance):
            raise DataError(
                f"truth {truth.id!r} has {truth.n_steps} steps, rollout covers "
                f"{len(res.provenance)}"
            )
    return ref


def curves(results: Sequence[RolloutResult], truths: Sequence[Simulation],
           metrics: Sequence[str] = METRICS,
           channels: Sequence[str] = PHYSICAL_CHANNELS) -> list[MetricCurve]:
    """Per-step, per-channel metric curves averaged across samples."""
    for name in metrics:
        if name not in METRICS:
            raise DataError(f"unknown metric {name!r}")
    steps = _paired_steps(results, truths)
    out = []
    for metric in metrics:
        fn = pcc if metric == "pcc" else mse_map
        for channel in channels:
            sums = np.zeros(len(steps))
            counts = np.zeros(len(steps), dtype=int)
            for res, truth in zip(results, truths):
                c_res = res.channels.index(channel)
                truth_arr = truth.maps(channel)
                for k, step in enumerate(steps):
                    value = fn(res.states[step, c_res], truth_arr[step])
                    if np.isnan(value):
                        continue
                    sums[k] += value
                    counts[k] += 1
            values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
            out.append(MetricCurve(metric, channel, list(steps), values, counts))
    return out


def write_curves(curve_list: Sequence[MetricCurve], out_dir: str | Path) -> list[Path]:
    """One CSV per curve: step, value, count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for curve in curve_list:
        path = out_dir / f"{curve.metric}_{curve.channel}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "value", "count"])
            for step, value, count in zip(curve.steps, curve.values, curve.counts):
                writer.writerow([step, f"{value:.10g}", count])
        paths.append(path)
    return paths


def read_curve(path: str | Path) -> MetricCurve:
    path = Path(path)
    metric, channel = path.stem.split("_", 1)
    steps, values, counts = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            values.append(float(row["value"]))
            counts.append(int(row["count"]))
    return MetricCurve(metric, channel, steps, np.asarray(values),
                       np.asarray(counts, dtype=int))
