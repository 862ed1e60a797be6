"""Synthetic scenes with a known degradation model.

The HR-HSI is a piecewise-smooth mixture of smooth material spectra laid out
over random polygons. A ground-truth ``PidmModel`` is then hand-wired so that
its warp depends only on position, its modulation adds a smooth
position-dependent spectral offset, and its band blocks apply a spectral
response with a controllable amount of curvature. ``Y`` and ``Z`` are that
model's outputs on ``X``, computed in float32 exactly as ``spatial`` and
``spectral`` would recompute them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .kernels import KernelParams, project_kernel_params
from .model import ModelConfig, PidmModel
from .numerics import ShapeError, to_nchw
from .spedn import BandBlocks, BandMatrix


@dataclass
class SyntheticScene:
    X: torch.Tensor
    Y: torch.Tensor
    Z: torch.Tensor
    model: PidmModel
    seed: int


# ------------------------------------------------------------------- the cube


def material_spectra(rng: np.random.Generator, n: int, bands: int) -> np.ndarray:
    """n x bands smooth spectra in [0.1, 0.9]."""
    t = np.linspace(0.0, 1.0, bands)
    out = np.empty((n, bands))
    for k in range(n):
        s = rng.uniform(0.2, 0.5) + rng.uniform(-0.2, 0.2) * t
        for _ in range(rng.integers(2, 4)):
            s = s + rng.uniform(-0.3, 0.4) * np.exp(-0.5 * ((t - rng.uniform(0, 1)) / rng.uniform(0.08, 0.3)) ** 2)
        out[k] = s
    lo, hi = out.min(), out.max()
    return 0.1 + 0.8 * (out - lo) / max(hi - lo, 1e-9)


def polygon_mask(H: int, W: int, verts: np.ndarray) -> np.ndarray:
    """Even-odd rule fill of the polygon with (y, x) vertices."""
    yy, xx = np.mgrid[0:H, 0:W]
    inside = np.zeros((H, W), dtype=bool)
    vy, vx = verts[:, 0], verts[:, 1]
    j = len(verts) - 1
    for i in range(len(verts)):
        crosses = (vy[i] > yy) != (vy[j] > yy)
        x_at = (vx[j] - vx[i]) * (yy - vy[i]) / (vy[j] - vy[i] + 1e-12) + vx[i]
        inside ^= crosses & (xx < x_at)
        j = i
    return inside


def random_polygon(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    n = rng.integers(3, 8)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.12, 0.4, n) * min(H, W)
    return np.stack([cy + rad * np.sin(ang), cx + rad * np.cos(ang)], axis=1)


def smooth_field(rng: np.random.Generator, H: int, W: int, n_waves: int = 4,
                 periods=(24.0, 96.0)) -> np.ndarray:
    """Sum of random plane waves, rescaled to [0, 1]."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    f = np.zeros((H, W))
    for _ in range(n_waves):
        th = rng.uniform(0, np.pi)
        period = rng.uniform(*periods)
        f += np.cos(2 * np.pi * (yy * np.sin(th) + xx * np.cos(th)) / period + rng.uniform(0, 2 * np.pi))
    return (f - f.min()) / max(f.max() - f.min(), 1e-9)


def make_cube(rng: np.random.Generator, H: int, W: int, C: int, n_materials: int = 6,
              n_polygons: int = 10, noise: float = 0.003) -> np.ndarray:
    spectra = material_spectra(rng, n_materials, C)
    labels = np.zeros((H, W), dtype=int)
    for _ in range(n_polygons):
        labels[polygon_mask(H, W, random_polygon(rng, H, W))] = rng.integers(0, n_materials)
    partner = rng.integers(0, n_materials, size=n_materials)
    frac = 0.5 * smooth_field(rng, H, W)
    shade = 0.8 + 0.2 * smooth_field(rng, H, W, n_waves=6, periods=(6.0, 20.0))
    X = (1 - frac)[..., None] * spectra[labels] + frac[..., None] * spectra[partner[labels]]
    X = X * shade[..., None] + noise * rng.standard_normal((H, W, C))
    return np.clip(X, 0.0, 1.0)


# ---------------------------------------------------------- ground-truth model


def spectral_response(rng: np.random.Generator, C: int, c: int) -> np.ndarray:
    """c x C rows of Gaussian band responses, each summing to one."""
    t = np.arange(C)
    rows = []
    for n in range(c):
        centre = (n + 0.5) * C / c + rng.uniform(-0.15, 0.15) * C / c
        width = rng.uniform(0.35, 0.7) * C / c
        r = np.exp(-0.5 * ((t - centre) / width) ** 2)
        rows.append(r / r.sum())
    return np.array(rows)


def random_kernel(rng: np.random.Generator, kernel_size: int = 25) -> KernelParams:
    major, minor = rng.uniform(2.5, 5.0), rng.uniform(0.6, 1.4)
    dy, dx = (major, minor) if rng.random() < 0.5 else (minor, major)
    return KernelParams(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), dy, dx,
                        rng.uniform(0.15, math.pi - 0.15), kernel_size)


def wire_affine_warp(model: PidmModel, zoom: float, rot: float) -> None:
    """Make the warp generator emit dy = zoom*p + rot*q, dx = zoom*q - rot*p, ignoring image content."""
    g = model.spadn.warp_gen
    with torch.no_grad():
        for conv in (g.enc1a, g.enc1b, g.enc2a, g.enc2b, g.dec1a, g.dec1b, g.head):
            conv.zero_()
        # inputs are [mean, p, q]; units carry 1+p, 1+q, 1-p, 1-q (all >= 0, so ReLU is inert)
        for unit, (ch, sign) in enumerate([(1, 1), (2, 1), (1, -1), (2, -1)]):
            g.enc1a.weight[unit, ch, 1, 1] = sign
            g.enc1a.bias[unit] = 1.0
            g.enc1b.weight[unit, unit, 1, 1] = 1.0
            g.dec1a.weight[unit, g.enc2b.cout + unit, 1, 1] = 1.0
            g.dec1b.weight[unit, unit, 1, 1] = 1.0
        half = 0.5
        g.head.weight[0, :4, 0, 0] = torch.tensor([zoom * half, rot * half, -zoom * half, -rot * half])
        g.head.weight[1, :4, 0, 0] = torch.tensor([-rot * half, zoom * half, rot * half, -zoom * half])


def wire_modulation(model: PidmModel, rng: np.random.Generator, amplitude: float,
                    n_features: int = 6, H: int = 64, W: int = 64) -> None:
    """Make the modulator add a smooth, zero-mean, spectrally smooth offset driven by position only."""
    sp = model.spedn
    enc, mod = sp.encoder, sp.modulator
    C = sp.bands_in
    with torch.no_grad():
        for conv in (enc.conv1, enc.conv2, mod.conv1, mod.conv2, mod.conv3):
            conv.zero_()
        enc.conv1.weight[0, 0, 0, 0] = 1.0
        enc.conv1.weight[1, 1, 0, 0] = 1.0
        enc.conv1.bias[:2] = 3.0
        enc.conv2.weight[0, 0, 0, 0] = 1.0
        enc.conv2.weight[1, 1, 0, 0] = 1.0
        for j in range(n_features):
            th = rng.uniform(0, 2 * np.pi)
            mod.conv1.weight[j, C + 0, 1, 1] = math.cos(th)
            mod.conv1.weight[j, C + 1, 1, 1] = math.sin(th)
            mod.norm1.scale[j] = rng.uniform(1.5, 3.0)
            mod.norm1.shift[j] = rng.uniform(-1.0, 1.0)
            mod.conv2.weight[j, j, 1, 1] = 1.0
        mod.norm1.scale[n_features:] = 0.0
        mod.norm2.scale[n_features:] = 0.0
        t = np.linspace(0, 1, C)
        for j in range(n_features):
            profile = np.cos(np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi))
            mod.conv3.weight[:, j, 1, 1] = torch.from_numpy(profile * rng.uniform(0.5, 1.0))
        # centre the offsets over the grid and set their peak amplitude
        grid_enc = sp.encode(H, W, dtype=mod.conv3.weight.dtype)
        zero = torch.zeros(1, C, H, W, dtype=grid_enc.dtype)
        off = mod(zero, grid_enc)
        mod.conv3.bias -= off.mean(dim=(0, 2, 3))
        peak = float((off - off.mean(dim=(0, 2, 3), keepdim=True)).abs().max())
        mod.conv3.weight *= amplitude / max(peak, 1e-12)
        mod.conv3.bias *= amplitude / max(peak, 1e-12)


def wire_band_blocks(model: PidmModel, srf: np.ndarray, X: torch.Tensor, curvature: float) -> None:
    """Each block n outputs ~ srf[n] . x plus ``curvature`` times a GELU bend, kept inside [0.02, 0.98]."""
    blocks: BandBlocks = model.spedn.project
    w = blocks.width
    with torch.no_grad():
        blocks.first.zero_()
        blocks.last.zero_()
        blocks.norm.scale.zero_()
        blocks.norm.shift.zero_()
        for n, row in enumerate(srf):
            base = n * w
            r = torch.from_numpy(row)
            blocks.first.weight[base, :, 0, 0] = r
            blocks.first.weight[base + 1, :, 0, 0] = r
            blocks.norm.scale[base:base + 2] = 1.0
            blocks.norm.shift[base] = 4.0  # GELU(z + 4) ~ z + 4 over the data range
        x = model.spedn.modulate(to_nchw(X.to(blocks.first.weight.dtype)))
        h = blocks.first(x)
        mu = h.mean(dim=(0, 2, 3))
        sd = torch.sqrt(h.var(dim=(0, 2, 3), unbiased=False) + 1e-5)
        z = (h - mu.view(1, -1, 1, 1)) / sd.view(1, -1, 1, 1)
        for n in range(len(srf)):
            base = n * w
            bend_mean = float(F.gelu(z[0, base + 1]).mean())
            s, m = float(sd[base]), float(mu[base])
            blocks.last.weight[n, 0, 0, 0] = s
            blocks.last.weight[n, 1, 0, 0] = curvature * s
            blocks.last.bias[n] = m - 4.0 * s - curvature * s * bend_mean
        out = blocks(x)
        for n in range(len(srf)):
            lo, hi = float(out[0, n].min()), float(out[0, n].max())
            lam = min(1.0, 0.48 / max(0.5 - lo, 1e-9), 0.48 / max(hi - 0.5, 1e-9))
            if lam < 1.0:
                blocks.last.weight[n] *= lam
                blocks.last.bias[n] = 0.5 + lam * (blocks.last.bias[n] - 0.5)


def ground_truth_model(rng: np.random.Generator, X: torch.Tensor, c: int, s: int,
                       disable=(), kernel: KernelParams | None = None, curvature: float = 0.6,
                       warp_px: float = 2.0, modulation: float = 0.08, kernel_size: int = 25) -> PidmModel:
    H, W, C = X.shape
    cfg = ModelConfig(C, c, (s, s), kernel_size=kernel_size, disable=tuple(disable), seed=0)
    model = PidmModel(cfg).double()
    kp = kernel if kernel is not None else random_kernel(rng, kernel_size)
    if cfg.enabled("ad"):
        with torch.no_grad():
            model.spadn.kernel_params.copy_(kp.as_tensor())
        project_kernel_params(model.spadn.kernel_params, kernel_size)
    if cfg.enabled("sw"):
        a = rng.uniform(0.4, 0.6) * warp_px
        zoom = a * rng.choice([-1, 1])
        rot = (warp_px - a) * rng.choice([-1, 1])
        wire_affine_warp(model, zoom, rot)
    srf = spectral_response(rng, C, c)
    if cfg.enabled("sm"):
        wire_modulation(model, rng, modulation, H=H // s, W=W // s)
    if cfg.enabled("pd"):
        wire_band_blocks(model, srf, X, curvature)
    else:
        assert isinstance(model.spedn.project, BandMatrix)
        with torch.no_grad():
            model.spedn.project.weight.copy_(torch.from_numpy(srf))
    return model.float()


def make_synthetic(seed: int, H: int = 256, W: int = 256, C: int = 31, c: int = 3, s: int = 4,
                   disable=(), kernel: KernelParams | None = None, curvature: float = 0.6,
                   warp_px: float = 2.0, modulation: float = 0.08, n_materials: int = 6,
                   noise: float = 0.003, constant_spectrum: bool = False) -> SyntheticScene:
    """Deterministic scene and ground-truth degradation from ``seed``.

    ``disable`` removes components from the ground truth the same way the
    ablation switches do for a trained model.
    """
    if H % s or W % s:
        raise ShapeError(f"{H}x{W} is not divisible by scale {s}")
    rng = np.random.default_rng(seed)
    if constant_spectrum:
        spec = material_spectra(rng, 1, C)[0]
        X = np.broadcast_to(spec, (H, W, C)).copy()
    else:
        X = make_cube(rng, H, W, C, n_materials=n_materials, noise=noise)
    X64 = torch.from_numpy(X)
    model = ground_truth_model(rng, X64, c, s, disable=disable, kernel=kernel, curvature=curvature,
                               warp_px=warp_px, modulation=modulation)
    X32 = X64.float()
    with torch.no_grad():
        Y = model.spatial(X32)
        Z = model.spectral(X32)
    return SyntheticScene(X32, Y.contiguous(), Z.contiguous(), model, seed)
