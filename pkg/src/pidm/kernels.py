"""Shifted anisotropic Gaussian blur kernels and blur-then-decimate."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .numerics import ShapeError, _check_hwc, from_nchw, to_nchw

MIN_SPREAD = 0.1


@dataclass
class KernelParams:
    """Offsets (pixels), axis spreads (pixels^2) and rotation (radians)."""

    alpha_y: float = 0.0
    alpha_x: float = 0.0
    delta_y: float = 3.0
    delta_x: float = 3.0
    beta: float = 0.0
    kernel_size: int = 25

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")

    def as_tensor(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor([self.alpha_y, self.alpha_x, self.delta_y, self.delta_x, self.beta],
                            dtype=dtype)

    @classmethod
    def from_tensor(cls, t: torch.Tensor, kernel_size: int = 25) -> "KernelParams":
        return cls(*[float(v) for v in t.detach().cpu()], kernel_size=kernel_size)


@dataclass(frozen=True)
class DownsampleSpec:
    s_y: int
    s_x: int
    phase: int = 0

    def __post_init__(self):
        if self.s_y < 1 or self.s_x < 1:
            raise ValueError("decimation factors must be positive")
        if not 0 <= self.phase < min(self.s_y, self.s_x):
            raise ValueError("phase must lie in [0, s)")


def project_kernel_params(p: torch.Tensor, kernel_size: int) -> None:
    """Clamp a 5-vector [alpha_y, alpha_x, delta_y, delta_x, beta] into the feasible box, in place."""
    with torch.no_grad():
        p[0:2].clamp_(-kernel_size / 4, kernel_size / 4)
        p[2:4].clamp_(MIN_SPREAD, kernel_size / 2)


def kernel_exponent(p: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """-(1/2) v^T S^-1 v on the centered integer grid, with S = R diag(delta) R^T."""
    ay, ax, dy_, dx_, beta = p.unbind()
    r = (kernel_size - 1) // 2
    idx = torch.arange(-r, r + 1, dtype=p.dtype)
    vy = idx[:, None] - ay
    vx = idx[None, :] - ax
    c, s = torch.cos(beta), torch.sin(beta)
    # coordinates in the rotated frame: R^T v
    u1 = c * vy + s * vx
    u2 = -s * vy + c * vx
    return -0.5 * (u1 * u1 / dy_ + u2 * u2 / dx_)


def generate_kernel(p: KernelParams | torch.Tensor, kernel_size: int | None = None) -> torch.Tensor:
    """Unit-sum k x k kernel; differentiable w.r.t. the five parameters when given a tensor."""
    if isinstance(p, KernelParams):
        kernel_size = p.kernel_size
        p = p.as_tensor()
    elif kernel_size is None:
        kernel_size = 25
    if kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    if bool((p[2:4] <= 0).any()):
        raise ValueError(f"axis spreads must be positive, got {p[2:4].tolist()}")
    e = kernel_exponent(p, kernel_size)
    return torch.softmax(e.reshape(-1), dim=0).reshape(kernel_size, kernel_size)


def blur_decimate_nchw(x: torch.Tensor, kernel: torch.Tensor, s_y: int, s_x: int,
                       phase: int = 0) -> torch.Tensor:
    H, W = x.shape[-2:]
    if H % s_y or W % s_x:
        raise ShapeError(f"{H}x{W} is not divisible by factors ({s_y}, {s_x})")
    C = x.shape[1]
    k = kernel.shape[-1]
    r = k // 2
    # true convolution: flip, then cross-correlate
    w = kernel.flip(0, 1).to(x.dtype).expand(C, 1, k, k)
    xp = F.pad(x, (r, r, r, r), mode="replicate")
    if phase:
        xp = xp[..., phase:, phase:]
    return F.conv2d(xp, w, stride=(s_y, s_x), groups=C)


def blur_and_decimate(img: torch.Tensor, kernel: torch.Tensor, spec: DownsampleSpec) -> torch.Tensor:
    """Convolve every band with ``kernel`` (replicated borders), keep every s-th sample from ``phase``."""
    _check_hwc(img)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ShapeError("kernel must be square with odd extent")
    return from_nchw(blur_decimate_nchw(to_nchw(img), kernel, spec.s_y, spec.s_x, spec.phase))
