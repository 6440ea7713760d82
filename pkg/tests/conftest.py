"""Session fixtures for the desk-scale end-to-end experiment.

The acceptance suite shares one synthetic ensemble (6 simulations,
32x32 maps, 20 steps, split 5/1) and one trained level-0 checkpoint per
model family, so the expensive work happens once per session.
"""
import time
from types import SimpleNamespace

import pytest

from porestack.data import split_ensemble
from porestack.features import (fit_norm_stats, windows_for,
                                with_engineered_channels)
from porestack.models import ModelSpec
from porestack.physics import SynthConfig, generate_ensemble
from porestack.stacking import TrainConfig, train_level0, window_tensors

# Small per-family architectures that train on one CPU core in minutes.
DESK_SPECS = {
    "convlstm": ModelSpec(family="convlstm", hidden_channels=8, num_layers=1),
    "ufno": ModelSpec(family="ufno", width=12, modes=6, fourier_layers=1,
                      ufourier_layers=1),
    "tau": ModelSpec(family="tau", hidden_spatial=8, hidden_temporal=16,
                     blocks=2),
}

DESK_MODEL_FIELDS = {
    "convlstm": {"hidden_channels": 8, "num_layers": 1},
    "ufno": {"width": 12, "modes": 6, "fourier_layers": 1,
             "ufourier_layers": 1},
    "tau": {"hidden_spatial": 8, "hidden_temporal": 16, "blocks": 2},
}


def desk_train_config() -> TrainConfig:
    return TrainConfig(lr=5e-4, batch_size=4, max_epochs=100, patience=20,
                       seed=0)


@pytest.fixture(scope="session")
def desk():
    """Synthetic ensemble, split, statistics, and teacher-forced windows."""
    started = time.perf_counter()
    ensemble = generate_ensemble(SynthConfig(seed=0), 6)
    generation_seconds = time.perf_counter() - started
    ensemble = split_ensemble(ensemble, train_count=5, seed=0)
    stats = fit_norm_stats(ensemble.train())
    train_sims = [with_engineered_channels(s) for s in ensemble.train()]
    val_sims = [with_engineered_channels(s) for s in ensemble.validation()]
    train_w = windows_for(train_sims, 5, 5)
    val_w = windows_for(val_sims, 5, 5)
    x_train, y_train = window_tensors(train_w, stats)
    x_val, y_val = window_tensors(val_w, stats)
    return SimpleNamespace(
        ensemble=ensemble,
        stats=stats,
        train_w=train_w,
        val_w=val_w,
        x_train=x_train,
        y_train=y_train,
        x_val=x_val,
        y_val=y_val,
        generation_seconds=generation_seconds,
    )


@pytest.fixture(scope="session")
def trained_families(desk):
    """Level-0 checkpoints for all three families, with wall-clock times."""
    out = {}
    for name, spec in DESK_SPECS.items():
        started = time.perf_counter()
        ck = train_level0(spec, desk.train_w, desk.val_w, desk.stats,
                          desk_train_config())
        out[name] = SimpleNamespace(
            checkpoint=ck,
            seconds=time.perf_counter() - started,
        )
    return out
