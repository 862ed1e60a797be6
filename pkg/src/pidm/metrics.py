"""Degradation-pair metrics and the no-reference fusion score QNR.

The quality index Q(a, b) = 4 cov(a,b) mu_a mu_b / ((var_a + var_b)(mu_a^2 + mu_b^2))
is averaged over every 32 x 32 block position (stride 1). Box statistics come
from summed-area tables, so each band pair costs O(H W) regardless of block size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
import torch

from .kernels import blur_and_decimate
from .numerics import ShapeError
from .selftrain import pair_metrics

QNR_BLOCK = 32


class MetricConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PairReport:
    ssim: float
    rmse: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QnrReport:
    d_lambda: float
    d_s: float
    qnr: float

    @classmethod
    def from_distortions(cls, d_lambda: float, d_s: float) -> "QnrReport":
        return cls(float(d_lambda), float(d_s), float((1.0 - d_lambda) * (1.0 - d_s)))

    def to_dict(self) -> dict:
        return asdict(self)


def pair_report(model, Y: torch.Tensor, Z: torch.Tensor) -> PairReport:
    s, r = pair_metrics(model, Y, Z)
    return PairReport(s, r)


# ---------------------------------------------------------------- Q index


def _box_mean(x: np.ndarray, k: int) -> np.ndarray:
    """Mean over every k x k window fully inside the (..., H, W) array."""
    s = np.zeros(x.shape[:-2] + (x.shape[-2] + 1, x.shape[-1] + 1))
    s[..., 1:, 1:] = x.cumsum(-2).cumsum(-1)
    return (s[..., k:, k:] - s[..., :-k, k:] - s[..., k:, :-k] + s[..., :-k, :-k]) / (k * k)


class _BandStats:
    """Per-band block means and variances of an H x W x C cube, reused across pairs."""

    def __init__(self, cube, block: int):
        a = np.asarray(cube.detach().cpu() if isinstance(cube, torch.Tensor) else cube, dtype=np.float64)
        if a.ndim != 3:
            raise ShapeError("expected an H x W x bands cube")
        if block < 1 or block > min(a.shape[:2]):
            raise MetricConfigError(f"block size {block} exceeds the image extent {a.shape[:2]}")
        self.block = block
        self.bands = np.ascontiguousarray(a.transpose(2, 0, 1))
        self.mu = _box_mean(self.bands, block)
        self.var = np.maximum(_box_mean(self.bands ** 2, block) - self.mu ** 2, 0.0)


def _q_from_stats(a: _BandStats, i: int, b: _BandStats, j: int) -> float:
    mu_a, mu_b = a.mu[i], b.mu[j]
    cov = _box_mean(a.bands[i] * b.bands[j], a.block) - mu_a * mu_b
    num = 4.0 * cov * mu_a * mu_b
    den = (a.var[i] + b.var[j]) * (mu_a ** 2 + mu_b ** 2)
    flat = den <= 1e-300
    q = np.where(flat, np.where(np.isclose(mu_a, mu_b), 1.0, 0.0), num / np.where(flat, 1.0, den))
    return float(q.mean())


def q_index(a, b, block: int = QNR_BLOCK) -> float:
    """Universal image quality index of two H x W images, averaged over sliding blocks."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("q_index needs two images of identical H x W shape")
    sa, sb = _BandStats(a[..., None], block), _BandStats(b[..., None], block)
    return _q_from_stats(sa, 0, sb, 0)


# --------------------------------------------------------------------- QNR


def d_lambda(fused, Y, block: int = QNR_BLOCK) -> float:
    f, y = _BandStats(fused, block), _BandStats(Y, block)
    C = f.bands.shape[0]
    if y.bands.shape[0] != C:
        raise ShapeError("fused and HSI band counts differ")
    if C < 2:
        return 0.0
    diffs = [abs(_q_from_stats(f, l, f, r) - _q_from_stats(y, l, y, r)) for l, r in combinations(range(C), 2)]
    return float(np.mean(diffs))


def d_s(fused, Y, Z, Z_lr, block: int = QNR_BLOCK) -> float:
    f, y = _BandStats(fused, block), _BandStats(Y, block)
    z, zl = _BandStats(Z, block), _BandStats(Z_lr, block)
    if f.bands.shape[1:] != z.bands.shape[1:] or y.bands.shape[1:] != zl.bands.shape[1:]:
        raise ShapeError("fused/MSI or HSI/low-resolution MSI extents differ")
    diffs = [abs(_q_from_stats(f, l, z, m) - _q_from_stats(y, l, zl, m))
             for l in range(f.bands.shape[0]) for m in range(z.bands.shape[0])]
    return float(np.mean(diffs))


def qnr_from_lr(fused, Y, Z, Z_lr, block: int = QNR_BLOCK) -> QnrReport:
    """QNR given an explicit low-resolution MSI (same extent as Y)."""
    return QnrReport.from_distortions(d_lambda(fused, Y, block), d_s(fused, Y, Z, Z_lr, block))


def low_resolution_msi(model, Z: torch.Tensor) -> torch.Tensor:
    """Blur and decimate Z with the model's kernel (no warp)."""
    sp = model.spadn
    with torch.no_grad():
        k = sp.kernel().double()
        return blur_and_decimate(Z.double(), k, sp.spec)


def qnr(fused, Y, Z, model, block: int = QNR_BLOCK) -> QnrReport:
    if fused.shape[:2] != Z.shape[:2] or fused.shape[2] != Y.shape[2]:
        raise ShapeError(f"fused cube {tuple(fused.shape)} must be H x W of the MSI and have the HSI bands")
    return qnr_from_lr(fused, Y, Z, low_resolution_msi(model, Z), block)
