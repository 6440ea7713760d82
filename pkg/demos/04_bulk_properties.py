"""Track porosity and a permeability proxy along a forecast trajectory.

Bulk properties reduce each 2-D state to one number, which is what a
reservoir-scale consumer actually wants from these forecasts.  The
permeability proxy solves a steady pressure problem on the porosity
map and reports normalized through-flux, so treat it as a relative
indicator rather than a calibrated permeability.
"""
import argparse

from porestack.bulk import bulk_series
from porestack.data import split_ensemble
from porestack.features import fit_norm_stats, windows_for, with_engineered_channels
from porestack.models import ModelSpec
from porestack.physics import SynthConfig, generate_ensemble
from porestack.rollout import StackPredictor, rollout
from porestack.stacking import StackedModel, TrainConfig, train_level0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=40)
    args = parser.parse_args()

    ensemble = generate_ensemble(SynthConfig(seed=0, height=24, width=24,
                                             steps=12), count=4)
    ensemble = split_ensemble(ensemble, train_count=3, seed=0)
    stats = fit_norm_stats(ensemble.train())
    train_w = windows_for([with_engineered_channels(s)
                           for s in ensemble.train()], 2, 2)
    val_w = windows_for([with_engineered_channels(s)
                         for s in ensemble.validation()], 2, 2)

    spec = ModelSpec(family="tau", in_steps=2, out_steps=2, in_channels=7,
                     out_channels=4, hidden_spatial=8, hidden_temporal=16,
                     blocks=2)
    ck = train_level0(spec, train_w, val_w, stats,
                      TrainConfig(max_epochs=args.epochs, batch_size=4,
                                  patience=10, seed=0))

    truth = ensemble.validation()[0]
    result = rollout(StackPredictor(StackedModel([ck]), stats), truth)

    steps = result.predicted_steps
    for series in bulk_series(truth, {"forecast": result}, steps=steps):
        print(f"\n{series.property} at steps {list(series.steps)}")
        print("  truth:   ", "  ".join(f"{v:.4f}" for v in series.truth))
        for label, vals in sorted(series.variants.items()):
            print(f"  {label}: ", "  ".join(f"{v:.4f}" for v in vals))


if __name__ == "__main__":
    main()
