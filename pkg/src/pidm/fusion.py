"""A minimal fusion network driven by a frozen degradation model, in two modes.

TSG: degradations synthesize (input, target) pairs from auxiliary HR cubes at a
reduced scale and the network is trained on them.
OFC: the network is fitted to one scene so that its output, degraded
spatially and spectrally, reproduces the observed HSI and MSI.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Conv, reset_convs
from .metrics import QnrReport, qnr
from .model import PidmModel
from .numerics import AdamState, ShapeError, adam_step, from_nchw, l1_loss, to_nchw

FUSION_WIDTH = 48
MODES = ("tsg", "ofc")


@dataclass(frozen=True)
class ModeConfig:
    mode: str = "ofc"
    epochs: int = 300
    lr: float = 1e-3
    samples: int = 0  # TSG: auxiliary cubes used, 0 = all
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0 or self.samples < 0:
            raise ValueError("epochs and samples must be >= 0")


class FusionModel(nn.Module):
    """Bicubic upsampling of Y plus a 4-layer 3x3 residual correction conditioned on Z."""

    def __init__(self, hsi_bands: int, msi_bands: int, width: int = FUSION_WIDTH, seed: int = 0):
        super().__init__()
        self.hsi_bands, self.msi_bands = hsi_bands, msi_bands
        self.conv1 = Conv(hsi_bands + msi_bands, width, 3)
        self.conv2 = Conv(width, width, 3)
        self.conv3 = Conv(width, width, 3)
        self.conv4 = Conv(width, hsi_bands, 3)
        reset_convs(self, torch.Generator().manual_seed(seed))
        self.conv4.zero_()

    @staticmethod
    def upsample(y: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        return F.interpolate(y, size=size, mode="bicubic", align_corners=False)

    def forward_nchw(self, y: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if y.shape[1] != self.hsi_bands or z.shape[1] != self.msi_bands:
            raise ShapeError(f"fusion model expects {self.hsi_bands}/{self.msi_bands} bands")
        up = self.upsample(y, tuple(z.shape[-2:]))
        h = F.gelu(self.conv1(torch.cat((up, z), dim=1)))
        h = F.gelu(self.conv2(h))
        h = F.gelu(self.conv3(h))
        return up + self.conv4(h)

    def forward(self, Y: torch.Tensor, Z: torch.Tensor) -> torch.Tensor:
        """(h x w x C, H x W x c) -> H x W x C."""
        return from_nchw(self.forward_nchw(to_nchw(Y), to_nchw(Z)))


@contextlib.contextmanager
def frozen(model: nn.Module):
    """Disable gradients on ``model`` for the duration, restoring the flags afterwards."""
    flags = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad_(False)
    try:
        yield model
    finally:
        for p, f in zip(model.parameters(), flags):
            p.requires_grad_(f)


def _check_scene(pidm: PidmModel, Y: torch.Tensor, Z: torch.Tensor) -> None:
    cfg = pidm.cfg
    if Y.ndim != 3 or Z.ndim != 3:
        raise ShapeError("cubes must be H x W x bands")
    if Y.shape[2] != cfg.hsi_bands or Z.shape[2] != cfg.msi_bands:
        raise ShapeError(f"degradation model expects {cfg.hsi_bands}/{cfg.msi_bands} bands")
    if tuple(Z.shape[:2]) != (Y.shape[0] * cfg.scale[0], Y.shape[1] * cfg.scale[1]):
        raise ShapeError(f"MSI {tuple(Z.shape[:2])} and HSI {tuple(Y.shape[:2])} disagree with scale {cfg.scale}")


def _fit(net: FusionModel, loss_fn, cfg: ModeConfig) -> list[float]:
    params = list(net.parameters())
    state = AdamState(lr=cfg.lr)
    losses = []
    for epoch in range(cfg.epochs):
        loss = loss_fn(epoch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise FloatingPointError(f"fusion loss became {value} at epoch {epoch}")
        loss.backward()
        adam_step(params, state)
        losses.append(value)
    return losses


# ------------------------------------------------------------------- OFC


def ofc_loss(pidm: PidmModel, X: torch.Tensor, Y: torch.Tensor, Z: torch.Tensor) -> torch.Tensor:
    """mean|Y - Gamma(X)| + mean|Z - Psi(X)|."""
    return l1_loss(pidm.spatial(X), Y) + l1_loss(pidm.spectral(X), Z)


def ofc_fit(pidm: PidmModel, Y: torch.Tensor, Z: torch.Tensor,
            cfg: ModeConfig = ModeConfig()) -> tuple[FusionModel, list[float]]:
    _check_scene(pidm, Y, Z)
    Y, Z = Y.to(pidm.dtype), Z.to(pidm.dtype)
    net = FusionModel(Y.shape[2], Z.shape[2], seed=cfg.seed).to(pidm.dtype)
    with frozen(pidm):
        losses = _fit(net, lambda _: ofc_loss(pidm, net(Y, Z), Y, Z), cfg)
    return net, losses


def ofc_fuse(pidm: PidmModel, Y: torch.Tensor, Z: torch.Tensor, cfg: ModeConfig = ModeConfig()) -> torch.Tensor:
    net, _ = ofc_fit(pidm, Y, Z, cfg)
    with torch.no_grad():
        return net(Y.to(pidm.dtype), Z.to(pidm.dtype))


# ------------------------------------------------------------------- TSG


def tsg_pairs(pidm: PidmModel, aux_cubes) -> list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """(Y_a2, Z_a2, Y_a) per auxiliary cube: the observed pair degraded one more level, and its target."""
    cfg = pidm.cfg
    pairs = []
    with torch.no_grad():
        for X in aux_cubes:
            if X.ndim != 3 or X.shape[2] != cfg.hsi_bands:
                raise ShapeError(f"auxiliary cube must have {cfg.hsi_bands} bands (compress it first)")
            sy, sx = cfg.scale
            if X.shape[0] % (sy * sy) or X.shape[1] % (sx * sx):
                raise ShapeError(f"auxiliary cube {tuple(X.shape[:2])} must be divisible by scale^2")
            X = X.to(pidm.dtype)
            Ya, Za = pidm.spatial(X), pidm.spectral(X)
            pairs.append((pidm.spatial(Ya), pidm.spatial(Za), Ya))
    return pairs


def tsg_train(pidm: PidmModel, aux_cubes, cfg: ModeConfig = ModeConfig(mode="tsg"),
              trace: list | None = None) -> FusionModel:
    cubes = list(aux_cubes)
    if cfg.samples:
        cubes = cubes[:cfg.samples]
    if not cubes:
        raise ValueError("TSG training needs at least one auxiliary cube")
    pairs = tsg_pairs(pidm, cubes)
    net = FusionModel(pidm.cfg.hsi_bands, pidm.cfg.msi_bands, seed=cfg.seed).to(pidm.dtype)

    def loss_fn(_):
        return sum(l1_loss(net(y2, z2), ya) for y2, z2, ya in pairs) / len(pairs)

    losses = _fit(net, loss_fn, cfg)
    if trace is not None:
        trace.extend(losses)
    return net


def tsg_fuse(net: FusionModel, Y: torch.Tensor, Z: torch.Tensor) -> torch.Tensor:
    dtype = net.conv1.weight.dtype
    with torch.no_grad():
        return net(Y.to(dtype), Z.to(dtype))


# ----------------------------------------------------------------- scoring


def fuse_and_score(pidm: PidmModel, Y: torch.Tensor, Z: torch.Tensor, cfg: ModeConfig = ModeConfig(),
                   evaluator: PidmModel | None = None) -> QnrReport:
    """OFC-fuse with ``pidm`` and score with QNR; ``evaluator`` supplies the LR MSI (default ``pidm``)."""
    fused = ofc_fuse(pidm, Y, Z, cfg)
    return qnr(fused, Y, Z, evaluator if evaluator is not None else pidm)
