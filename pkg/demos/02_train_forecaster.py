"""Train a small level-0 forecaster on synthetic trajectories.

The model takes the last two states (seven channels each: the four
physical fields plus velocity magnitude, log-scaled concentration, and
the reactive-region filter) and predicts the next two physical states
in normalized space.  Swap --family to compare architectures.
"""
import argparse
from pathlib import Path

import torch

from porestack.data import split_ensemble
from porestack.features import fit_norm_stats, windows_for, with_engineered_channels
from porestack.models import ModelSpec
from porestack.physics import SynthConfig, generate_ensemble
from porestack.stacking import (StackedModel, TrainConfig, save_stack,
                                train_level0, window_tensors)

SMALL = {
    "convlstm": {"hidden_channels": 8, "num_layers": 1},
    "ufno": {"width": 12, "modes": 6, "fourier_layers": 1, "ufourier_layers": 1},
    "tau": {"hidden_spatial": 8, "hidden_temporal": 16, "blocks": 2},
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", choices=sorted(SMALL), default="tau")
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--out", default="demo-out/forecaster")
    args = parser.parse_args()

    ensemble = generate_ensemble(SynthConfig(seed=0, height=24, width=24,
                                             steps=12), count=4)
    ensemble = split_ensemble(ensemble, train_count=3, seed=0)

    # Normalization statistics come from the training split only.
    stats = fit_norm_stats(ensemble.train())
    train_sims = [with_engineered_channels(s) for s in ensemble.train()]
    val_sims = [with_engineered_channels(s) for s in ensemble.validation()]
    train_w = windows_for(train_sims, in_steps=2, out_steps=2)
    val_w = windows_for(val_sims, in_steps=2, out_steps=2)
    print(f"{len(train_w)} training windows, {len(val_w)} validation windows")

    spec = ModelSpec(family=args.family, in_steps=2, out_steps=2,
                     in_channels=7, out_channels=4, **SMALL[args.family])
    cfg = TrainConfig(max_epochs=args.epochs, batch_size=4, patience=10, seed=0)
    ck = train_level0(spec, train_w, val_w, stats, cfg)

    for row in ck.log:
        print(f"epoch {row['epoch']:3d}  train {row['train_loss']:.5f}  "
              f"val {row['val_loss']:.5f}")
    best = min(row["val_loss"] for row in ck.log)
    print(f"\nbest validation loss {best:.5f} "
          f"(restored into the checkpoint automatically)")

    # Families disagree on the objective (tau adds a divergence penalty
    # over summed errors), so also report a plain mean squared error.
    x_val, y_val = window_tensors(val_w, stats)
    model = ck.build()
    with torch.no_grad():
        val_mse = float(((model(x_val) - y_val) ** 2).mean())
    print(f"validation mse in normalized space: {val_mse:.5f}")

    out = Path(args.out) / args.family
    save_stack(StackedModel([ck]), out)
    print(f"saved level-0 stack to {out}")


if __name__ == "__main__":
    main()
