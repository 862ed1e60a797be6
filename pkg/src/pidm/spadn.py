"""Spatial degradation: warp the image, then blur and decimate it.

The warp generator is a two-level UNet fed with the channel mean of the image
plus the normalized (p, q) coordinate planes, so the same network serves
inputs with any band count and can express position-dependent distortion.
Displacements are in pixels, ordered (dy, dx).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .kernels import (DownsampleSpec, KernelParams, blur_decimate_nchw, generate_kernel,
                      project_kernel_params)
from .layers import Conv, reset_convs
from .numerics import ShapeError, _check_hwc, coordinate_grid, from_nchw, grid_sample_nchw, pixel_grid, to_nchw

# fixed kernel used when the adaptive kernel is ablated
BASE_KERNEL = KernelParams(0.0, 0.0, 3.0, 3.0, 0.0)


@dataclass(frozen=True)
class WarpGenConfig:
    widths: tuple[int, int] = (16, 32)
    conv_size: int = 3
    eps: float = 3.0


def truncate(field: torch.Tensor, eps: float) -> torch.Tensor:
    """Zero every entry whose magnitude exceeds ``eps``; the boundary itself is kept."""
    if eps <= 0:
        raise ValueError("truncation threshold must be positive")
    return torch.where(field.abs() <= eps, field, torch.zeros_like(field))


class WarpGenerator(nn.Module):
    def __init__(self, cfg: WarpGenConfig = WarpGenConfig()):
        super().__init__()
        self.cfg = cfg
        w1, w2 = cfg.widths
        k = cfg.conv_size
        self.enc1a, self.enc1b = Conv(3, w1, k), Conv(w1, w1, k)
        self.enc2a, self.enc2b = Conv(w1, w2, k), Conv(w2, w2, k)
        self.dec1a, self.dec1b = Conv(w1 + w2, w1, k), Conv(w1, w1, k)
        self.head = Conv(w1, 2, 1)

    def reset(self, gen: torch.Generator) -> None:
        reset_convs(self, gen)
        self.head.zero_()

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        """Untruncated displacement planes, 1 x 2 x H x W."""
        H, W = x.shape[-2:]
        if H < 2 or W < 2:
            raise ShapeError(f"warp generator needs at least 2x2 pixels, got {H}x{W}")
        grid = coordinate_grid(H, W, x.dtype).permute(2, 0, 1).unsqueeze(0)
        inp = torch.cat((x.mean(dim=1, keepdim=True), grid), dim=1)
        e1 = F.relu(self.enc1b(F.relu(self.enc1a(inp))))
        e2 = F.avg_pool2d(e1, 2, ceil_mode=True)
        e2 = F.relu(self.enc2b(F.relu(self.enc2a(e2))))
        up = F.interpolate(e2, size=(H, W), mode="bilinear", align_corners=False)
        d = torch.cat((up, e1), dim=1)
        d = F.relu(self.dec1b(F.relu(self.dec1a(d))))
        return self.head(d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return truncate(self.raw(x), self.cfg.eps)


def warp_nchw(x: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Sample ``x`` at (y + dy, x + dx); ``field`` is 1 x 2 x H x W."""
    H, W = x.shape[-2:]
    coords = pixel_grid(H, W, x.dtype).unsqueeze(0) + field.permute(0, 2, 3, 1)
    return grid_sample_nchw(x, coords)


class SpaDN(nn.Module):
    """Warp (optional) -> shifted anisotropic blur -> decimation."""

    def __init__(self, scale: tuple[int, int] = (4, 4), kernel_size: int = 25, eps: float = 3.0,
                 phase: int = 0, warp: bool = True, adaptive_kernel: bool = True,
                 widths: tuple[int, int] = (16, 32)):
        super().__init__()
        self.spec = DownsampleSpec(scale[0], scale[1], phase)
        self.kernel_size = kernel_size
        self.adaptive_kernel = adaptive_kernel
        self.warp_gen = WarpGenerator(WarpGenConfig(widths=widths, eps=eps)) if warp else None
        init = KernelParams(*BASE_KERNEL.as_tensor().tolist(), kernel_size=kernel_size).as_tensor(torch.float32)
        if adaptive_kernel:
            self.kernel_params = nn.Parameter(init)
        else:
            self.register_buffer("kernel_params", init)

    def reset(self, gen: torch.Generator) -> None:
        if self.warp_gen is not None:
            self.warp_gen.reset(gen)

    def project(self) -> None:
        project_kernel_params(self.kernel_params, self.kernel_size)

    def kernel(self) -> torch.Tensor:
        return generate_kernel(self.kernel_params, self.kernel_size)

    def field_nchw(self, x: torch.Tensor) -> torch.Tensor:
        if self.warp_gen is None:
            return torch.zeros(1, 2, *x.shape[-2:], dtype=x.dtype)
        return self.warp_gen(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """1 x c x H x W -> 1 x c x h x w."""
        H, W = x.shape[-2:]
        if H % self.spec.s_y or W % self.spec.s_x:
            raise ShapeError(f"{H}x{W} is not divisible by scale ({self.spec.s_y}, {self.spec.s_x})")
        if self.warp_gen is not None:
            x = warp_nchw(x, self.warp_gen(x))
        return blur_decimate_nchw(x, self.kernel(), self.spec.s_y, self.spec.s_x, self.spec.phase)


def _spadn_of(model) -> SpaDN:
    return model if isinstance(model, SpaDN) else model.spadn


def generate_warp_field(img: torch.Tensor, model) -> torch.Tensor:
    """H x W x 2 displacement field (dy, dx) for ``img`` (H x W x c)."""
    _check_hwc(img)
    net = _spadn_of(model)
    return from_nchw(net.field_nchw(to_nchw(img)))


def apply_warp(img: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    _check_hwc(img)
    if field.shape != (*img.shape[:2], 2):
        raise ShapeError("warp field must be H x W x 2 matching the image")
    return from_nchw(warp_nchw(to_nchw(img), to_nchw(field.to(img.dtype))))


def spadn_forward(img: torch.Tensor, model) -> torch.Tensor:
    """H x W x c -> h x w x c."""
    _check_hwc(img)
    return from_nchw(_spadn_of(model)(to_nchw(img)))
