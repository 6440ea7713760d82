"""Add a correction level, roll the stack along a trajectory, score it.

A correction level is a second network with the same architecture,
trained to map the previous level's outputs onto the ground truth.  At
inference the levels run as a composition: base prediction in, refined
prediction out.  The rollout then feeds each corrected block back as
the next input window, so errors can compound; the per-step metric
curves below make that visible.

Corrections rarely beat a well-trained base at this toy scale; the
test suite's desk-scale configuration (32x32 maps, five-step windows)
is where the stacked level holds or improves the training error.
"""
import argparse

import numpy as np

from porestack.data import split_ensemble
from porestack.features import fit_norm_stats, windows_for, with_engineered_channels
from porestack.metrics import curves
from porestack.models import ModelSpec
from porestack.physics import SynthConfig, generate_ensemble
from porestack.rollout import StackPredictor, rollout
from porestack.stacking import (StackedModel, TrainConfig, build_level_dataset,
                                stack_refine, train_correction_level,
                                train_level0, window_tensors)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=40)
    args = parser.parse_args()

    ensemble = generate_ensemble(SynthConfig(seed=0, height=24, width=24,
                                             steps=12), count=4)
    ensemble = split_ensemble(ensemble, train_count=3, seed=0)
    stats = fit_norm_stats(ensemble.train())
    train_sims = [with_engineered_channels(s) for s in ensemble.train()]
    val_sims = [with_engineered_channels(s) for s in ensemble.validation()]
    train_w = windows_for(train_sims, 2, 2)
    val_w = windows_for(val_sims, 2, 2)

    spec = ModelSpec(family="tau", in_steps=2, out_steps=2, in_channels=7,
                     out_channels=4, hidden_spatial=8, hidden_temporal=16,
                     blocks=2)
    cfg = TrainConfig(max_epochs=args.epochs, batch_size=4, patience=20, seed=0)
    level0 = train_level0(spec, train_w, val_w, stats, cfg)

    # The correction level sees only what the base level produced, so
    # its training pairs are materialized from frozen level-0 outputs.
    base = StackedModel([level0])
    train_ds = build_level_dataset(base, train_w, stats)
    val_ds = build_level_dataset(base, val_w, stats)
    level1 = train_correction_level(1, train_ds, val_ds, spec, cfg,
                                    stats.content_hash())
    stack = StackedModel([level0, level1])

    x_train, y_train = window_tensors(train_w, stats)
    mse0 = float(np.mean((train_ds.predictions - train_ds.targets) ** 2))
    mse1 = float(((stack_refine(stack, x_train) - y_train) ** 2).mean())
    print(f"training-split mse: level 0 {mse0:.5f}, after level 1 {mse1:.5f}")

    predictor = StackPredictor(stack, stats)
    truth = ensemble.validation()[0]
    result = rollout(predictor, truth)
    print(f"rolled {truth.id}: {len(result.predicted_steps)} of "
          f"{len(result.provenance)} steps predicted, "
          f"{len(result.forward_seconds)} forward passes")

    for curve in curves([result], [truth], metrics=("pcc",)):
        line = "  ".join(f"{v:.3f}" for v in curve.values)
        print(f"pcc[{curve.channel}] over steps {list(curve.steps)}: {line}")


if __name__ == "__main__":
    main()
