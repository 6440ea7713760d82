"""Convolutional LSTM encoder-decoder for multi-step map forecasting."""
from __future__ import annotations

import torch
import torch.nn as nn


class ConvLSTMCell(nn.Module):
    """One peephole convolutional LSTM cell.

    Gates mix a convolution of the input, a convolution of the hidden
    map, and an elementwise (per-channel scalar) weighting of the cell
    state: input and forget gates look at the previous cell state, the
    output gate at the updated one.  Keeping the cell-state weights at
    1x1 spatial extent makes the cell resolution-independent.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd to preserve the grid shape")
        pad = kernel_size // 2
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.input_conv = nn.Conv2d(in_channels, 4 * hidden_channels,
                                    kernel_size, padding=pad, bias=True)
        self.hidden_conv = nn.Conv2d(hidden_channels, 4 * hidden_channels,
                                     kernel_size, padding=pad, bias=False)
        self.cell_weights = nn.Parameter(torch.zeros(3, hidden_channels, 1, 1))

    def init_state(self, batch: int, height: int, width: int,
                   ref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        shape = (batch, self.hidden_channels, height, width)
        zeros = torch.zeros(shape, device=ref.device, dtype=ref.dtype)
        return zeros, zeros.clone()

    def forward(self, x: torch.Tensor,
                state: tuple[torch.Tensor, torch.Tensor]
                ) -> tuple[torch.Tensor, torch.Tensor]:
        h, c = state
        xi, xf, xg, xo = self.input_conv(x).chunk(4, dim=1)
        hi, hf, hg, ho = self.hidden_conv(h).chunk(4, dim=1)
        w_ci, w_cf, w_co = self.cell_weights
        i = torch.sigmoid(xi + hi + w_ci * c)
        f = torch.sigmoid(xf + hf + w_cf * c)
        g = torch.tanh(xg + hg)
        c_next = f * c + i * g
        o = torch.sigmoid(xo + ho + w_co * c_next)
        h_next = o * torch.tanh(c_next)
        return h_next, c_next


class ConvLSTMForecaster(nn.Module):
    """Stacked-cell encoder-decoder that maps m input maps to n output maps.

    The encoder consumes the input sequence layer by layer; its final
    states seed the decoder, whose first input is the top encoder hidden
    map and whose later inputs are its own previous top hidden map.  A
    3-D convolution head with a sigmoid turns the decoder hidden stack
    into output maps in (0, 1).
    """

    def __init__(self, in_channels: int, out_channels: int, out_steps: int,
                 hidden_channels: int = 16, num_layers: int = 2,
                 kernel_size: int = 3, head_kernel: int = 3):
        super().__init__()
        self.out_steps = out_steps
        self.encoder = nn.ModuleList([
            ConvLSTMCell(in_channels if k == 0 else hidden_channels,
                         hidden_channels, kernel_size)
            for k in range(num_layers)
        ])
        self.decoder = nn.ModuleList([
            ConvLSTMCell(hidden_channels, hidden_channels, kernel_size)
            for _ in range(num_layers)
        ])
        pad = head_kernel // 2
        self.head = nn.Conv3d(hidden_channels, out_channels,
                              kernel_size=head_kernel, padding=pad)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ValueError(f"expected (B, T, C, H, W) input, got {tuple(x.shape)}")
        batch, _, _, height, width = x.shape
        states = [cell.init_state(batch, height, width, x) for cell in self.encoder]
        for t in range(x.shape[1]):
            inp = x[:, t]
            for k, cell in enumerate(self.encoder):
                states[k] = cell(inp, states[k])
                inp = states[k][0]
        dec_input = states[-1][0]
        outputs = []
        for _ in range(self.out_steps):
            inp = dec_input
            for k, cell in enumerate(self.decoder):
                states[k] = cell(inp, states[k])
                inp = states[k][0]
            outputs.append(inp)
            dec_input = inp
        hidden = torch.stack(outputs, dim=2)      # (B, hid, n, H, W)
        maps = torch.sigmoid(self.head(hidden))   # (B, C_out, n, H, W)
        return maps.permute(0, 2, 1, 3, 4)
