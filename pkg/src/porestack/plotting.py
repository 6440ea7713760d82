"""Static figure emission for evaluation curves and bulk series."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .bulk import BulkSeries  # noqa: E402
from .metrics import MetricCurve  # noqa: E402


def plot_curves(curve_list: Sequence[MetricCurve],
                out_dir: str | Path) -> list[Path]:
    """One line chart per (metric, channel) curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for curve in curve_list:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        values = np.asarray(curve.values, dtype=float)
        ax.plot(curve.steps, values, marker="o", markersize=3)
        ax.set_xlabel("step")
        ax.set_ylabel(curve.metric)
        ax.set_title(f"{curve.metric} for {curve.channel}")
        if curve.metric == "pcc":
            ax.set_ylim(-1.05, 1.05)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{curve.metric}_{curve.channel}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_bulk(series_list: Sequence[BulkSeries],
              out_dir: str | Path) -> list[Path]:
    """One chart per property: truth as a solid line, variants dashed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for series in series_list:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(series.steps, series.truth, label="truth", linewidth=2)
        for name in sorted(series.variants):
            ax.plot(series.steps, series.variants[name], "--", label=name)
        ax.set_xlabel("step")
        ax.set_ylabel(series.property)
        ax.set_title(f"bulk {series.property}")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"bulk_{series.property}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_history(log: Sequence[dict], path: str | Path) -> Path:
    """Training and validation loss per epoch for one checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [row["epoch"] for row in log]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [row["train_loss"] for row in log], label="train")
    ax.plot(epochs, [row["val_loss"] for row in log], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
