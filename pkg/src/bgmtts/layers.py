"""Convolutional building blocks shared by Text2Mel and SSRN."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class Conv1d(nn.Module):
    """1-D conv on ``[B, C, T]`` with 'same' or causal (left-only) padding."""

    def __init__(self, c_in, c_out, kernel=1, dilation=1, causal=False, activation=None):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, dilation=dilation)
        total = (kernel - 1) * dilation
        self.pad = (total, 0) if causal else (total // 2, total - total // 2)
        self.activation = activation

    def forward(self, x):
        y = self.conv(F.pad(x, self.pad))
        return self.activation(y) if self.activation is not None else y


class HighwayConv1d(nn.Module):
    def __init__(self, channels, kernel=3, dilation=1, causal=False):
        super().__init__()
        self.conv = Conv1d(channels, 2 * channels, kernel, dilation, causal)

    def forward(self, x):
        h1, h2 = self.conv(x).chunk(2, dim=1)
        gate = torch.sigmoid(h1)
        return gate * h2 + (1 - gate) * x


def highway_stack(channels, spec, causal=False):
    """``spec`` is a list of ``(kernel, dilation)`` pairs."""
    return nn.Sequential(*[HighwayConv1d(channels, k, d, causal) for k, d in spec])
