"""Small nn.Module wrappers over the numerics primitives."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import conv2d_nchw, init_uniform_, instance_norm_nchw


class Conv(nn.Module):
    """Replicate-padded same-size convolution (optionally grouped)."""

    def __init__(self, cin: int, cout: int, k: int = 3, groups: int = 1):
        super().__init__()
        self.cin, self.cout, self.k, self.groups = cin, cout, k, groups
        self.weight = nn.Parameter(torch.zeros(cout, cin // groups, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))

    def reset(self, gen: torch.Generator) -> None:
        fan_in = (self.cin // self.groups) * self.k * self.k
        init_uniform_(self.weight, fan_in, gen)
        init_uniform_(self.bias, fan_in, gen)

    def zero_(self) -> None:
        with torch.no_grad():
            self.weight.zero_()
            self.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.k == 1:
            return F.conv2d(x, self.weight, self.bias, groups=self.groups)
        return conv2d_nchw(x, self.weight, self.bias, groups=self.groups)


class InstanceNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(channels))
        self.shift = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return instance_norm_nchw(x, self.scale, self.shift)


def reset_convs(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, Conv):
            m.reset(gen)
