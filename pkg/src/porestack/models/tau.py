"""Recurrence-free forecaster built on decomposed temporal attention.

Frames are encoded independently to a low-resolution latent, the latent
stack (time folded into channels) is processed by attention blocks, and
a mirrored decoder restores the grid.  Attention splits into a static
part (large receptive field from a depthwise, a dilated depthwise, and
a pointwise convolution) and a dynamic part (a squeeze-excitation style
channel gate), multiplied together onto the block input.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class TemporalAttentionModule(nn.Module):
    """Static large-kernel attention times a dynamic channel gate."""

    def __init__(self, dim: int, kernel_size: int = 11, dilation: int = 3,
                 reduction: int = 8):
        super().__init__()
        dw_kernel = 2 * dilation - 1
        dd_kernel = kernel_size // dilation + (kernel_size // dilation) % 2 - 1
        if dd_kernel < 1:
            raise ValueError(f"kernel_size {kernel_size} too small for dilation {dilation}")
        self.depthwise = nn.Conv2d(dim, dim, dw_kernel,
                                   padding=(dw_kernel - 1) // 2, groups=dim)
        self.dilated = nn.Conv2d(dim, dim, dd_kernel, dilation=dilation,
                                 padding=dilation * (dd_kernel - 1) // 2, groups=dim)
        self.pointwise = nn.Conv2d(dim, dim, 1)
        hidden = max(dim // reduction, 4)
        self.gate = nn.Sequential(
            nn.Linear(dim, hidden, bias=False),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, dim, bias=False),
            nn.Sigmoid(),
        )

    def dynamic_gate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.gate(pooled).unsqueeze(-1).unsqueeze(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        static = self.pointwise(self.dilated(self.depthwise(x)))
        return self.dynamic_gate(x) * static * x


class AttentionBlock(nn.Module):
    """Pre-norm residual block: attention then a pointwise MLP, each with
    a learned per-channel scale on its residual branch."""

    def __init__(self, dim: int, kernel_size: int = 11, mlp_ratio: int = 4,
                 init_scale: float = 1e-2):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, dim)
        self.proj_in = nn.Conv2d(dim, dim, 1)
        self.attention = TemporalAttentionModule(dim, kernel_size)
        self.proj_out = nn.Conv2d(dim, dim, 1)
        self.norm2 = nn.GroupNorm(1, dim)
        hidden = dim * mlp_ratio
        self.mlp = nn.Sequential(
            nn.Conv2d(dim, hidden, 1),
            nn.GELU(),
            nn.Conv2d(hidden, dim, 1),
        )
        self.scale1 = nn.Parameter(init_scale * torch.ones(dim, 1, 1))
        self.scale2 = nn.Parameter(init_scale * torch.ones(dim, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.proj_out(self.attention(F.gelu(self.proj_in(self.norm1(x)))))
        x = x + self.scale1 * y
        return x + self.scale2 * self.mlp(self.norm2(x))


class _ConvStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(1, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.gelu(self.norm(self.conv(x)))


class _DeconvStage(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(channels, channels, 3, stride=2,
                                       padding=1, output_padding=1)
        self.norm = nn.GroupNorm(1, channels)

    def forward(self, x: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
        y = self.conv(x)[..., :target[0], :target[1]]
        return F.gelu(self.norm(y))


class TAUForecaster(nn.Module):
    """Per-frame conv encoder, temporal attention over the folded latent
    stack, and a mirrored conv decoder with one encoder skip."""

    strides = (1, 2, 1, 2)

    def __init__(self, in_channels: int, out_channels: int, in_steps: int,
                 out_steps: int, hidden_spatial: int = 16, hidden_temporal: int = 64,
                 blocks: int = 4, kernel_size: int = 11):
        super().__init__()
        self.in_steps = in_steps
        self.out_steps = out_steps
        self.out_channels = out_channels
        hs = hidden_spatial
        self.encoder = nn.ModuleList([
            _ConvStage(in_channels if k == 0 else hs, hs, stride)
            for k, stride in enumerate(self.strides)
        ])
        self.in_proj = nn.Conv2d(in_steps * hs, hidden_temporal, 1)
        self.blocks = nn.ModuleList([
            AttentionBlock(hidden_temporal, kernel_size) for _ in range(blocks)
        ])
        self.out_proj = nn.Conv2d(hidden_temporal, out_steps * hs, 1)
        self.decoder = nn.ModuleList([
            _DeconvStage(hs) if stride == 2 else _ConvStage(hs, hs, 1)
            for stride in reversed(self.strides)
        ])
        self.readout = nn.Conv2d(hs, out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ValueError(f"expected (B, T, C, H, W) input, got {tuple(x.shape)}")
        batch, steps, channels, height, width = x.shape
        y = x.reshape(batch * steps, channels, height, width)
        sizes = []
        first_feature = None
        for stage, stride in zip(self.encoder, self.strides):
            if stride == 2:
                sizes.append(y.shape[-2:])
            y = stage(y)
            if first_feature is None:
                first_feature = y
        latent_h, latent_w = y.shape[-2:]
        z = y.reshape(batch, steps * y.shape[1], latent_h, latent_w)
        z = self.in_proj(z)
        for block in self.blocks:
            z = block(z)
        z = self.out_proj(z)
        y = z.reshape(batch * self.out_steps, -1, latent_h, latent_w)
        up_sizes = list(reversed(sizes))
        k = 0
        for idx, stage in enumerate(self.decoder):
            if isinstance(stage, _DeconvStage):
                y = stage(y, up_sizes[k])
                k += 1
            else:
                if idx == len(self.decoder) - 1 and steps == self.out_steps:
                    y = y + first_feature
                y = stage(y)
        maps = torch.sigmoid(self.readout(y))
        return maps.reshape(batch, self.out_steps, self.out_channels, height, width)
