"""Spectral degradation: position-aware modulation, then per-band projection."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Conv, InstanceNorm, reset_convs
from .numerics import ShapeError, _check_hwc, coordinate_grid, from_nchw, to_nchw

BLOCK_WIDTH = 16
SMN_WIDTH = 64
EGEN_WIDTH = 32
# Output bias start: mid data range. A negated image scores SSIM ~1 against
# the original (both factors flip sign), so the initial mean must be positive.
BLOCK_BIAS_INIT = 0.5


def make_grid(h: int, w: int, dtype=torch.float64) -> torch.Tensor:
    """Normalized (p, q) coordinates, h x w x 2, each axis running -1 -> +1."""
    return coordinate_grid(h, w, dtype)


class PositionEncoder(nn.Module):
    """Pointwise 2 -> 32 -> D map of the coordinate grid (1x1 convolutions only)."""

    def __init__(self, enc_dim: int = 32):
        super().__init__()
        self.conv1 = Conv(2, EGEN_WIDTH, 1)
        self.conv2 = Conv(EGEN_WIDTH, enc_dim, 1)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.gelu(self.conv1(grid)))


class Modulator(nn.Module):
    """Residual 3x3 network over concat(bands, encoding); starts as the identity."""

    def __init__(self, bands: int, enc_dim: int = 32):
        super().__init__()
        self.conv1 = Conv(bands + enc_dim, SMN_WIDTH, 3)
        self.norm1 = InstanceNorm(SMN_WIDTH)
        self.conv2 = Conv(SMN_WIDTH, SMN_WIDTH, 3)
        self.norm2 = InstanceNorm(SMN_WIDTH)
        self.conv3 = Conv(SMN_WIDTH, bands, 3)

    def reset(self, gen: torch.Generator) -> None:
        reset_convs(self, gen)
        self.conv3.zero_()

    def forward(self, x: torch.Tensor, enc: torch.Tensor) -> torch.Tensor:
        h = F.gelu(self.norm1(self.conv1(torch.cat((x, enc), dim=1))))
        h = F.gelu(self.norm2(self.conv2(h)))
        return x + self.conv3(h)


class BandBlocks(nn.Module):
    """``c`` independent blocks, 1x1 conv C->16, instance norm, GELU, 1x1 conv 16->1.

    Stored as one wide first layer and one grouped last layer; block ``n`` owns
    hidden channels ``16n .. 16n+15`` and output channel ``n`` exclusively.
    """

    def __init__(self, bands_in: int, bands_out: int, width: int = BLOCK_WIDTH):
        super().__init__()
        self.bands_in, self.bands_out, self.width = bands_in, bands_out, width
        self.first = Conv(bands_in, width * bands_out, 1)
        self.norm = InstanceNorm(width * bands_out)
        self.last = Conv(width * bands_out, bands_out, 1, groups=bands_out)

    def hidden(self, x: torch.Tensor) -> torch.Tensor:
        return F.gelu(self.norm(self.first(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.last(self.hidden(x))

    def block_slices(self, n: int) -> slice:
        return slice(n * self.width, (n + 1) * self.width)

    def block(self, x: torch.Tensor, n: int) -> torch.Tensor:
        """Run block ``n`` alone on ``x`` (1 x C x h x w) -> 1 x 1 x h x w."""
        sl = self.block_slices(n)
        h = F.conv2d(x, self.first.weight[sl], self.first.bias[sl])
        h = F.instance_norm(h, weight=self.norm.scale[sl], bias=self.norm.shift[sl], eps=1e-5)
        h = F.gelu(h)
        return F.conv2d(h, self.last.weight[n:n + 1], self.last.bias[n:n + 1])


class BandMatrix(nn.Module):
    """Single trainable C -> c mixing matrix (ablation substitute for the band blocks)."""

    def __init__(self, bands_in: int, bands_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.full((bands_out, bands_in), 1.0 / bands_in))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.einsum("oc,nchw->nohw", self.weight, x)


class SpeDN(nn.Module):
    def __init__(self, bands_in: int, bands_out: int, enc_dim: int = 32,
                 modulation: bool = True, parallel: bool = True):
        super().__init__()
        self.bands_in, self.bands_out, self.enc_dim = bands_in, bands_out, enc_dim
        if modulation:
            self.encoder = PositionEncoder(enc_dim)
            self.modulator = Modulator(bands_in, enc_dim)
        else:
            self.encoder = self.modulator = None
        self.project = BandBlocks(bands_in, bands_out) if parallel else BandMatrix(bands_in, bands_out)

    def reset(self, gen: torch.Generator) -> None:
        if self.encoder is not None:
            reset_convs(self.encoder, gen)
            self.modulator.reset(gen)
        if isinstance(self.project, BandBlocks):
            reset_convs(self.project, gen)
            with torch.no_grad():
                self.project.last.bias.fill_(BLOCK_BIAS_INIT)

    def encode(self, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
        grid = make_grid(h, w, dtype).permute(2, 0, 1).unsqueeze(0)
        return self.encoder(grid)

    def modulate(self, x: torch.Tensor) -> torch.Tensor:
        if self.modulator is None:
            return x
        return self.modulator(x, self.encode(*x.shape[-2:], dtype=x.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """1 x C x h x w -> 1 x c x h x w, at any spatial size >= 2x2."""
        if x.shape[1] != self.bands_in:
            raise ShapeError(f"expected {self.bands_in} bands, got {x.shape[1]}")
        return self.project(self.modulate(x))


def _spedn_of(model) -> SpeDN:
    return model if isinstance(model, SpeDN) else model.spedn


def encode_positions(grid: torch.Tensor, model) -> torch.Tensor:
    """h x w x 2 grid -> h x w x D encoding."""
    _check_hwc(grid)
    net = _spedn_of(model)
    if net.encoder is None:
        raise ValueError("spectral modulation is disabled in this model")
    return from_nchw(net.encoder(to_nchw(grid.to(net.encoder.conv1.weight.dtype))))


def modulate(hsi: torch.Tensor, enc: torch.Tensor, model) -> torch.Tensor:
    _check_hwc(hsi)
    _check_hwc(enc, "encoding")
    if hsi.shape[:2] != enc.shape[:2]:
        raise ShapeError("image and encoding extents differ")
    net = _spedn_of(model)
    if net.modulator is None:
        return hsi
    return from_nchw(net.modulator(to_nchw(hsi), to_nchw(enc)))


def band_project(mod: torch.Tensor, model) -> torch.Tensor:
    _check_hwc(mod)
    return from_nchw(_spedn_of(model).project(to_nchw(mod)))


def spedn_forward(hsi: torch.Tensor, model) -> torch.Tensor:
    """h x w x C -> h x w x c."""
    _check_hwc(hsi)
    return from_nchw(_spedn_of(model)(to_nchw(hsi)))
