"""Fourier neural operator with a U-shaped convolutional branch."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class SpectralConv2d(nn.Module):
    """Linear map acting on a truncated 2-D Fourier basis.

    The real FFT of the input keeps frequency blocks [0:modes_h] and
    [-modes_h:] along the full axis and [0:modes_w] along the halved
    axis; each retained mode gets its own dense channel mix.  Weights
    are stored as real tensors with a trailing complex dimension so that
    optimizers and finite differences treat them like any other
    parameter.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 modes_h: int, modes_w: int):
        super().__init__()
        if modes_h < 1 or modes_w < 1:
            raise ValueError("mode counts must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.modes_h = modes_h
        self.modes_w = modes_w
        scale = 1.0 / (in_channels * out_channels)
        self.weights_low = nn.Parameter(
            scale * torch.rand(in_channels, out_channels, modes_h, modes_w, 2))
        self.weights_high = nn.Parameter(
            scale * torch.rand(in_channels, out_channels, modes_h, modes_w, 2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        if self.modes_h > height // 2 or self.modes_w > width // 2 + 1:
            raise ValueError(
                f"retained modes ({self.modes_h}, {self.modes_w}) exceed the "
                f"spectrum of a {height}x{width} grid"
            )
        x_ft = torch.fft.rfft2(x)
        out_ft = torch.zeros(
            x.shape[0], self.out_channels, height, width // 2 + 1,
            dtype=x_ft.dtype, device=x.device,
        )
        w_low = torch.view_as_complex(self.weights_low)
        w_high = torch.view_as_complex(self.weights_high)
        mh, mw = self.modes_h, self.modes_w
        out_ft[:, :, :mh, :mw] = torch.einsum(
            "bixy,ioxy->boxy", x_ft[:, :, :mh, :mw], w_low)
        out_ft[:, :, -mh:, :mw] = torch.einsum(
            "bixy,ioxy->boxy", x_ft[:, :, -mh:, :mw], w_high)
        return torch.fft.irfft2(out_ft, s=(height, width))


class UNetBranch(nn.Module):
    """Two-level contract/expand convolutional path with additive skips."""

    def __init__(self, channels: int):
        super().__init__()
        self.down1 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(channels, channels, 3, stride=2,
                                      padding=1, output_padding=1)
        self.up1 = nn.ConvTranspose2d(channels, channels, 3, stride=2,
                                      padding=1, output_padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d1 = F.gelu(self.down1(x))
        d2 = F.gelu(self.down2(d1))
        u2 = F.gelu(self.up2(d2)[..., :d1.shape[-2], :d1.shape[-1]] + d1)
        return self.up1(u2)[..., :x.shape[-2], :x.shape[-1]] + x


class FourierLayer(nn.Module):
    """spectral path + 1x1 bypass, with an optional U-shaped conv path."""

    def __init__(self, channels: int, modes_h: int, modes_w: int,
                 with_unet: bool, last: bool = False):
        super().__init__()
        self.spectral = SpectralConv2d(channels, channels, modes_h, modes_w)
        self.bypass = nn.Conv2d(channels, channels, 1)
        self.unet = UNetBranch(channels) if with_unet else None
        self.last = last

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.spectral(x) + self.bypass(x)
        if self.unet is not None:
            y = y + self.unet(x)
        return y if self.last else F.gelu(y)


class UFNOForecaster(nn.Module):
    """Fourier-operator forecaster: plain Fourier layers followed by
    Fourier layers augmented with a U-shaped convolutional branch.

    Input steps are folded into channels, lifted to a fixed width,
    transformed, then projected to the flattened output maps with a
    sigmoid.
    """

    def __init__(self, in_channels: int, out_channels: int, in_steps: int,
                 out_steps: int, width: int = 24, modes: int = 8,
                 fourier_layers: int = 2, ufourier_layers: int = 2):
        super().__init__()
        self.out_steps = out_steps
        self.out_channels = out_channels
        self.lift = nn.Conv2d(in_steps * in_channels, width, 1)
        total = fourier_layers + ufourier_layers
        self.layers = nn.ModuleList([
            FourierLayer(width, modes, modes, with_unet=(k >= fourier_layers),
                         last=(k == total - 1))
            for k in range(total)
        ])
        self.project = nn.Sequential(
            nn.Conv2d(width, 2 * width, 1),
            nn.GELU(),
            nn.Conv2d(2 * width, out_steps * out_channels, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ValueError(f"expected (B, T, C, H, W) input, got {tuple(x.shape)}")
        batch, steps, channels, height, width = x.shape
        y = self.lift(x.reshape(batch, steps * channels, height, width))
        for layer in self.layers:
            y = layer(y)
        y = torch.sigmoid(self.project(y))
        return y.reshape(batch, self.out_steps, self.out_channels, height, width)
