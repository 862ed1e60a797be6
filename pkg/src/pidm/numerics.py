"""Differentiable primitives on (height, width, channels) tensors, and Adam.

Everything here is a thin layer over torch autograd. Public functions take
and return tensors laid out as H x W x C (y before x); the ``*_nchw`` helpers
are the batched 1 x C x H x W forms the networks call directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


def to_nchw(x: torch.Tensor) -> torch.Tensor:
    return x.permute(2, 0, 1).unsqueeze(0)


def from_nchw(x: torch.Tensor) -> torch.Tensor:
    return x.squeeze(0).permute(1, 2, 0)


def _check_hwc(x: torch.Tensor, name: str = "input") -> None:
    if x.ndim != 3:
        raise ShapeError(f"{name} must be H x W x C, got shape {tuple(x.shape)}")


# ---------------------------------------------------------------- convolution


def conv2d_nchw(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
                stride: int | tuple[int, int] = 1, groups: int = 1) -> torch.Tensor:
    """Same-size cross-correlation with replicate borders; torch weight layout."""
    kh, kw = weight.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        x = F.pad(x, (pw, pw, ph, ph), mode="replicate")
    return F.conv2d(x, weight, bias, stride=stride, groups=groups)


def conv2d(x: torch.Tensor, weights: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Cross-correlate ``x`` (H x W x cin) with ``weights`` (kh x kw x cin x cout).

    Borders are replicated so the output keeps the input's spatial size.
    """
    _check_hwc(x)
    if weights.ndim != 4:
        raise ShapeError("weights must be kh x kw x cin x cout")
    if weights.shape[2] != x.shape[2]:
        raise ShapeError(f"input has {x.shape[2]} channels, weights expect {weights.shape[2]}")
    if bias is not None and bias.shape != (weights.shape[3],):
        raise ShapeError("bias length must equal cout")
    w = weights.permute(3, 2, 0, 1)
    return from_nchw(conv2d_nchw(to_nchw(x), w, bias))


# ------------------------------------------------------------------- sampling


def grid_sample_nchw(x: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of ``x`` (N x C x H x W) at pixel coordinates (N x h x w x 2, y then x).

    Coordinates outside the image are clamped to the border.
    """
    H, W = x.shape[-2:]
    sy = 2.0 / (H - 1) if H > 1 else 0.0
    sx = 2.0 / (W - 1) if W > 1 else 0.0
    grid = torch.stack((coords[..., 1] * sx - 1.0, coords[..., 0] * sy - 1.0), dim=-1)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=True)


def pixel_grid(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """h x w x 2 tensor holding each pixel's own (y, x) index."""
    ys = torch.arange(h, dtype=dtype)
    xs = torch.arange(w, dtype=dtype)
    return torch.stack(torch.meshgrid(ys, xs, indexing="ij"), dim=-1)


def grid_sample_bilinear(x: torch.Tensor, sample_coords: torch.Tensor) -> torch.Tensor:
    _check_hwc(x)
    if sample_coords.ndim != 3 or sample_coords.shape[2] != 2:
        raise ShapeError("sample_coords must be h x w x 2")
    out = grid_sample_nchw(to_nchw(x), sample_coords.unsqueeze(0).to(x.dtype))
    return from_nchw(out)


# ------------------------------------------------------- pointwise / per-band


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


IN_EPS = 1e-5


def instance_norm_nchw(x: torch.Tensor, scale: torch.Tensor | None = None,
                       shift: torch.Tensor | None = None, eps: float = IN_EPS) -> torch.Tensor:
    if x.shape[-1] * x.shape[-2] < 2:
        raise ShapeError("instance norm needs at least two pixels")
    mu = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if scale is not None:
        y = y * scale.view(1, -1, 1, 1)
    if shift is not None:
        y = y + shift.view(1, -1, 1, 1)
    return y


def instance_norm(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Standardize each channel over its spatial extent, then apply scale/shift."""
    _check_hwc(x)
    return from_nchw(instance_norm_nchw(to_nchw(x), scale, shift))


def concat_channels(*tensors: torch.Tensor) -> torch.Tensor:
    for t in tensors:
        _check_hwc(t)
        if t.shape[:2] != tensors[0].shape[:2]:
            raise ShapeError("spatial extents differ")
    return torch.cat(tensors, dim=2)


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def init_uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    """Fill ``t`` in place with U(-sqrt(1/fan_in), sqrt(1/fan_in)) from ``gen``."""
    bound = math.sqrt(1.0 / fan_in)
    with torch.no_grad():
        vals = torch.rand(t.shape, generator=gen, dtype=torch.float64) * (2 * bound) - bound
        t.copy_(vals.to(t.dtype))
    return t


# ----------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: list[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: list[torch.Tensor] = field(default_factory=list)


def adam_step(params: list[torch.Tensor], state: AdamState) -> AdamState:
    """One bias-corrected Adam update using each parameter's ``.grad``.

    Gradients are cleared afterwards. A non-finite gradient aborts before any
    parameter is touched.
    """
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    if len(state.exp_avg) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} (shape {tuple(p.shape)}) has no gradient")
        if not torch.isfinite(p.grad).all():
            bad = int((~torch.isfinite(p.grad)).sum())
            raise FloatingPointError(
                f"non-finite gradient in parameter {i} (shape {tuple(p.shape)}): {bad} bad entries")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for p, m, v in zip(params, state.exp_avg, state.exp_avg_sq):
            g = p.grad
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-state.lr / bc1)
            p.grad = None
    return state


def coordinate_grid(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """h x w x 2 grid of (p, q) with p_i = -1 + 2 i / (h - 1), likewise q; endpoints exactly +-1."""
    if h < 2 or w < 2:
        raise ShapeError(f"coordinate grid needs extents >= 2, got {h}x{w}")
    p = -1.0 + 2.0 * torch.arange(h, dtype=torch.float64) / (h - 1)
    q = -1.0 + 2.0 * torch.arange(w, dtype=torch.float64) / (w - 1)
    return torch.stack(torch.meshgrid(p, q, indexing="ij"), dim=-1).to(dtype)
