"""Bulk sample properties derived from porosity maps.

The permeability proxy re-solves the steady pressure equation on a
porosity map with a unit pressure drop and reports the normalized
through-flux K = Q * (W - 1) / (H * dp).  For a fully open box this
collapses to the open-cell conductivity, which gives the analytic
anchor used in tests.  The proxy shares its conductivity law with the
synthetic generator; its absolute values are only meaningful relative
to other maps run through the same proxy.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Simulation, StateMap
from .errors import DataError
from .physics import face_fluxes, percolates, solve_pressure
from .rollout import RolloutResult

# Sampled trajectory positions for long-run bulk comparisons.
DEFAULT_BULK_STEPS = tuple(range(5, 100, 10))

PROPERTIES = ("porosity", "permeability")


def _eps_values(eps) -> np.ndarray:
    if isinstance(eps, StateMap):
        if eps.channel != "eps":
            raise DataError(f"expected an eps map, got channel {eps.channel!r}")
        return np.asarray(eps.values, dtype=np.float64)
    arr = np.asarray(eps, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D porosity map, got shape {arr.shape}")
    return arr


def porosity(eps) -> float:
    """Spatial mean of the porosity map."""
    return float(_eps_values(eps).mean())


@dataclass
class PermeabilityResult:
    value: float
    percolating: bool


def permeability_proxy(eps, k_min: float = 1e-4, exponent: float = 3.0,
                       tol: float = 1e-8) -> PermeabilityResult:
    """Normalized through-flux under a unit pressure drop.

    Non-percolating maps short-circuit to zero with the flag cleared;
    everything else gets a fresh pressure solve.
    """
    values = _eps_values(eps)
    if not percolates(values):
        return PermeabilityResult(0.0, False)
    h, w = values.shape
    p = solve_pressure(values, p_in=1.0, p_out=0.0, k_min=k_min,
                       exponent=exponent, tol=tol)
    fx, _ = face_fluxes(p, values, k_min, exponent)
    q = float(fx[:, 0].sum())
    return PermeabilityResult(q * (w - 1) / h, True)


@dataclass
class BulkSeries:
    """One bulk property sampled at chosen steps: truth next to variants."""

    property: str
    steps: list[int]
    truth: np.ndarray
    variants: dict[str, np.ndarray]


def _property_fn(name: str):
    if name == "porosity":
        return lambda eps: porosity(eps)
    if name == "permeability":
        return lambda eps: permeability_proxy(eps).value
    raise DataError(f"unknown bulk property {name!r}")


def bulk_series(truth: Simulation, variants: Mapping[str, RolloutResult],
                steps: Sequence[int] | None = None,
                properties: Sequence[str] = PROPERTIES) -> list[BulkSeries]:
    """Evaluate bulk properties of truth and forecast porosity maps.

    `steps` defaults to the long-run sampling positions; every requested
    step must exist in the truth and in every variant.
    """
    if steps is None:
        steps = DEFAULT_BULK_STEPS
    steps = [int(s) for s in steps]
    if not steps:
        raise DataError("no steps requested")
    missing = [s for s in steps if s < 0 or s >= truth.n_steps]
    if missing:
        raise DataError(f"steps {missing} outside truth trajectory ({truth.n_steps})")
    for name, res in variants.items():
        short = [s for s in steps if s >= len(res.states)]
        if short:
            raise DataError(f"variant {name!r} is missing steps {short}")
    truth_eps = truth.maps("eps")
    out = []
    for prop in properties:
        fn = _property_fn(prop)
        truth_vals = np.array([fn(truth_eps[s]) for s in steps])
        variant_vals = {}
        for name, res in variants.items():
            c = res.channels.index("eps")
            variant_vals[name] = np.array([fn(res.states[s, c]) for s in steps])
        out.append(BulkSeries(prop, steps, truth_vals, variant_vals))
    return out


def rmse_series(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Root-mean-square error across samples, one value per step.

    `pred` and `truth` are (samples, steps) arrays; the mean runs over
    the sample axis.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise DataError(
            f"expected matching (samples, steps) arrays, got {pred.shape} "
            f"and {truth.shape}"
        )
    return np.sqrt(np.mean((pred - truth) ** 2, axis=0))


def write_series(series: Sequence[BulkSeries], out_dir: str | Path) -> list[Path]:
    """One CSV per property: step, truth, then one column per variant."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in series:
        path = out_dir / f"bulk_{s.property}.csv"
        names = sorted(s.variants)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "truth"] + names)
            for k, step in enumerate(s.steps):
                row = [step, f"{s.truth[k]:.10g}"]
                row += [f"{s.variants[name][k]:.10g}" for name in names]
                writer.writerow(row)
        paths.append(path)
    return paths
