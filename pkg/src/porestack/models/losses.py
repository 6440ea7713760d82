"""Training losses for map-sequence forecasters."""
from __future__ import annotations

import torch
import torch.nn.functional as F

KL_DIRECTIONS = ("true-to-pred", "pred-to-true")


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Plain mean squared error over every element."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def tau_loss(pred: torch.Tensor, target: torch.Tensor, alpha: float = 0.1,
             kl_direction: str = "true-to-pred") -> torch.Tensor:
    """Sum-form squared error plus a divergence penalty on frame-to-frame change.

    Inter-frame differences of the target and the prediction are each
    flattened per step and turned into distributions with a softmax; the
    penalty sums the KL divergence between matching distributions over
    the batch and the n-1 difference steps.  `kl_direction` picks which
    distribution is the reference: "true-to-pred" computes KL(true ||
    pred), "pred-to-true" the reverse.  With alpha = 0 the result is
    exactly the summed squared error.  Requires at least two output
    steps, since one step has no differences to regularize.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim < 3:
        raise ValueError("expected (B, n, ...) sequences")
    if pred.shape[1] < 2:
        raise ValueError("difference regularization needs at least 2 output steps")
    if kl_direction not in KL_DIRECTIONS:
        raise ValueError(f"kl_direction must be one of {KL_DIRECTIONS}")
    squared = torch.sum((pred - target) ** 2)
    if alpha == 0.0:
        return squared
    diff_pred = (pred[:, 1:] - pred[:, :-1]).flatten(2)
    diff_true = (target[:, 1:] - target[:, :-1]).flatten(2)
    log_p = F.log_softmax(diff_pred, dim=-1)
    log_q = F.log_softmax(diff_true, dim=-1)
    if kl_direction == "true-to-pred":
        kl = torch.sum(log_q.exp() * (log_q - log_p))
    else:
        kl = torch.sum(log_p.exp() * (log_p - log_q))
    return squared + alpha * kl
