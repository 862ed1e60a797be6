"""Self-supervised fitting of the degradation pair: 1 - SSIM(Gamma(Z), Psi(Y))."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .model import COMPONENTS, ModelConfig, PidmModel, check_pair_shapes, infer_scale
from .numerics import AdamState, ShapeError, adam_step, to_nchw

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    return (g / g.sum()).to(dtype)


def _filter_valid(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    k = g.numel()
    x = F.conv2d(x, g.view(1, 1, k, 1).expand(c, 1, k, 1), groups=c)
    return F.conv2d(x, g.view(1, 1, 1, k).expand(c, 1, 1, k), groups=c)


def ssim_map_nchw(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"SSIM inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {tuple(a.shape[-2:])}")
    g = gaussian_window(dtype=a.dtype)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean windowed SSIM of two h x w x c cubes in [0, 1] (11x11 Gaussian window, sigma 1.5)."""
    return ssim_map_nchw(to_nchw(a), to_nchw(b)).mean()


def rmse(a: torch.Tensor, b: torch.Tensor) -> float:
    if a.shape != b.shape:
        raise ShapeError("RMSE inputs differ in shape")
    return float(torch.sqrt(((a.double() - b.double()) ** 2).mean()))


def self_supervised_loss(model: PidmModel, Y: torch.Tensor, Z: torch.Tensor) -> torch.Tensor:
    Zt, Yt = model.degraded_pair(Y, Z)
    return 1.0 - ssim(Zt, Yt)


@dataclass
class TrainConfig:
    epochs: int = 2000
    lr: float = 5e-4
    seed: int = 0
    kernel_size: int = 25
    eps: float = 3.0
    enc_dim: int = 32
    disable: tuple[str, ...] = ()
    # components present but held fixed (e.g. a known spectral response)
    freeze: tuple[str, ...] = ()
    full_image: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.full_image:
            raise ValueError("training always uses the whole image")
        for c in (*self.disable, *self.freeze):
            if c not in COMPONENTS:
                raise ValueError(f"unknown component {c!r}")


@dataclass
class TrainReport:
    losses: list[float]
    final_ssim: float
    final_rmse: float
    elapsed: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def as_cube(x, dtype=torch.float32) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    return x.to(dtype)


def check_unit_range(x: torch.Tensor, name: str) -> None:
    lo, hi = float(x.min()), float(x.max())
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"{name} must be normalized to [0, 1], found [{lo:.4g}, {hi:.4g}]")


def component_parameters(model: PidmModel, component: str) -> list[torch.nn.Parameter]:
    if component == "pd":
        # band blocks, or the matrix that replaces them
        return list(model.spedn.project.parameters())
    if not model.cfg.enabled(component):
        return []
    if component == "sm":
        return [*model.spedn.encoder.parameters(), *model.spedn.modulator.parameters()]
    if component == "ad":
        return [model.spadn.kernel_params]
    if component == "sw":
        return list(model.spadn.warp_gen.parameters())
    raise ValueError(component)


def trainable_parameters(model: PidmModel, freeze=()) -> list[torch.nn.Parameter]:
    params = []
    for comp in ("sw", "ad", "sm", "pd"):
        if comp not in freeze:
            params.extend(component_parameters(model, comp))
    return params


def pair_metrics(model: PidmModel, Y: torch.Tensor, Z: torch.Tensor) -> tuple[float, float]:
    with torch.no_grad():
        Zt, Yt = model.degraded_pair(Y, Z)
        return float(ssim(Zt.double(), Yt.double())), rmse(Zt, Yt)


def train(Y, Z, cfg: TrainConfig = TrainConfig(), model: PidmModel | None = None,
          dtype=torch.float32) -> tuple[PidmModel, TrainReport]:
    """Fit SpaDN/SpeDN so the degraded MSI and degraded HSI agree.

    ``model`` (optional) supplies the starting point; it is copied, never
    modified. Otherwise a model is initialized from ``cfg.seed``.
    """
    Y, Z = as_cube(Y, dtype), as_cube(Z, dtype)
    check_unit_range(Y, "HSI")
    check_unit_range(Z, "MSI")
    if model is None:
        scale = infer_scale(Y.shape, Z.shape)
        mcfg = ModelConfig(Y.shape[2], Z.shape[2], scale, cfg.kernel_size, cfg.eps, cfg.enc_dim,
                           disable=tuple(cfg.disable), seed=cfg.seed)
        model = PidmModel(mcfg).to(dtype)
    else:
        model = model.clone().to(dtype)
    check_pair_shapes(model.cfg, Y, Z)

    params = trainable_parameters(model, cfg.freeze)
    for p in model.parameters():
        p.requires_grad_(any(p is q for q in params))
    state = AdamState(lr=cfg.lr)
    losses: list[float] = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        loss = self_supervised_loss(model, Y, Z)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(epoch, f"loss={value}")
        loss.backward()
        try:
            adam_step(params, state)
        except FloatingPointError as e:
            raise TrainingDiverged(epoch, str(e)) from None
        model.project()
        losses.append(value)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.5f", epoch, value)
    elapsed = time.perf_counter() - t0
    for p in model.parameters():
        p.requires_grad_(True)
    final_ssim, final_rmse = pair_metrics(model, Y, Z)
    report = TrainReport(losses, final_ssim, final_rmse, elapsed, config=asdict(cfg))
    return model, report
