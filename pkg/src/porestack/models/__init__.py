from .convlstm import ConvLSTMCell, ConvLSTMForecaster
from .losses import mse_loss, tau_loss
from .spec import (Checkpoint, FAMILIES, ModelSpec, build_model,
                   checkpoint_hash, load_checkpoint, parameter_count,
                   save_checkpoint)
from .tau import AttentionBlock, TAUForecaster, TemporalAttentionModule
from .ufno import SpectralConv2d, UFNOForecaster

__all__ = [
    "AttentionBlock", "Checkpoint", "ConvLSTMCell", "ConvLSTMForecaster",
    "FAMILIES", "ModelSpec", "SpectralConv2d", "TAUForecaster",
    "TemporalAttentionModule", "UFNOForecaster", "build_model",
    "checkpoint_hash", "load_checkpoint", "mse_loss", "parameter_count",
    "save_checkpoint", "tau_loss",
]
