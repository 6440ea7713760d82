"""Stacked deep-learning surrogates for pore-scale reactive dissolution.

The package covers the full loop: synthetic trajectory generation,
feature engineering and normalization, three forecaster families,
multi-level residual stacking, iterative rollout, per-step metric
curves, and bulk property series.
"""

from .bulk import (DEFAULT_BULK_STEPS, BulkSeries, PermeabilityResult,
                   bulk_series, permeability_proxy, porosity, rmse_series)
from .config import ExperimentConfig
from .data import (ENGINEERED_CHANNELS, PHYSICAL_CHANNELS, Ensemble,
                   Simulation, StateMap, ValidationReport, crop_borders,
                   split_ensemble, validate_simulation)
from .errors import (ConfigError, DataError, MissingInputError,
                     PorestackError, SolverError, TrainingError)
from .features import (NormStats, Window, combined_filter,
                       denormalize_outputs, engineered_state, fit_norm_stats,
                       make_windows, normalize_inputs, normalize_outputs,
                       scaled_concentration, velocity_magnitude,
                       windows_for, with_engineered_channels)
from .metrics import MetricCurve, curves, difference_map, mse_map, pcc
from .models import (Checkpoint, ModelSpec, build_model, load_checkpoint,
                     mse_loss, parameter_count, save_checkpoint, tau_loss)
from .physics import (SynthConfig, generate_ensemble, generate_simulation,
                      percolates, solve_pressure, steady_concentration)
from .rollout import (RolloutResult, StackPredictor, num_iterations,
                      read_rollout, rollout, save_rollout)
from .stacking import (StackedModel, TrainConfig, build_level_dataset,
                       load_stack, save_stack, stack_refine,
                       train_correction_level, train_level0)
from .storage import import_ensemble, read_ensemble, write_ensemble

__version__ = "0.1.0"

__all__ = [
    "BulkSeries", "Checkpoint", "ConfigError", "DEFAULT_BULK_STEPS",
    "DataError", "ENGINEERED_CHANNELS", "Ensemble", "ExperimentConfig",
    "MetricCurve", "MissingInputError", "ModelSpec", "NormStats",
    "PHYSICAL_CHANNELS", "PermeabilityResult", "PorestackError",
    "RolloutResult", "Simulation", "SolverError", "StackPredictor",
    "StackedModel", "StateMap", "SynthConfig", "TrainConfig",
    "TrainingError", "ValidationReport", "Window", "build_level_dataset",
    "build_model", "bulk_series", "combined_filter", "crop_borders",
    "curves", "denormalize_outputs", "difference_map", "engineered_state",
    "fit_norm_stats", "generate_ensemble", "generate_simulation",
    "import_ensemble", "load_checkpoint", "load_stack", "make_windows",
    "mse_loss", "mse_map", "normalize_inputs", "normalize_outputs",
    "num_iterations", "parameter_count", "pcc", "percolates",
    "permeability_proxy", "porosity", "read_ensemble", "read_rollout",
    "rmse_series", "rollout", "save_checkpoint", "save_rollout",
    "save_stack", "scaled_concentration", "solve_pressure", "split_ensemble",
    "stack_refine", "steady_concentration", "tau_loss",
    "train_correction_level", "train_level0", "validate_simulation",
    "velocity_magnitude", "windows_for", "with_engineered_channels",
    "write_ensemble", "__version__",
]
