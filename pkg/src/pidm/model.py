"""The combined degradation model and its on-disk format.

File layout: the 8 bytes ``PIDMv001``, one line of JSON (config plus the
name and shape of every stored tensor), then each tensor as float32
little-endian in that order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .numerics import ShapeError, from_nchw, to_nchw
from .spadn import SpaDN
from .spedn import SpeDN

MAGIC = b"PIDMv001"
FORMAT_VERSION = 1
COMPONENTS = ("pd", "ad", "sm", "sw")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hsi_bands: int
    msi_bands: int
    scale: tuple[int, int] = (4, 4)
    kernel_size: int = 25
    eps: float = 3.0
    enc_dim: int = 32
    phase: int = 0
    disable: tuple[str, ...] = ()
    seed: int = 0
    warp_widths: tuple[int, int] = (16, 32)

    def __post_init__(self):
        unknown = set(self.disable) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown components {sorted(unknown)}; choose from {COMPONENTS}")
        # canonical order keeps headers byte-stable
        object.__setattr__(self, "disable", tuple(c for c in COMPONENTS if c in self.disable))
        object.__setattr__(self, "scale", tuple(int(s) for s in self.scale))
        object.__setattr__(self, "warp_widths", tuple(int(s) for s in self.warp_widths))

    def enabled(self, component: str) -> bool:
        return component not in self.disable

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale"] = list(self.scale)
        d["disable"] = list(self.disable)
        d["warp_widths"] = list(self.warp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scale"] = tuple(d["scale"])
        d["disable"] = tuple(d["disable"])
        d["warp_widths"] = tuple(d.get("warp_widths", (16, 32)))
        return cls(**d)


class PidmModel(nn.Module):
    """Spatial (Gamma) and spectral (Psi) degradation networks with shared lifecycle."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.spadn = SpaDN(cfg.scale, cfg.kernel_size, cfg.eps, cfg.phase,
                           warp=cfg.enabled("sw"), adaptive_kernel=cfg.enabled("ad"),
                           widths=cfg.warp_widths)
        self.spedn = SpeDN(cfg.hsi_bands, cfg.msi_bands, cfg.enc_dim,
                           modulation=cfg.enabled("sm"), parallel=cfg.enabled("pd"))
        gen = torch.Generator().manual_seed(cfg.seed)
        self.spadn.reset(gen)
        self.spedn.reset(gen)

    @property
    def dtype(self) -> torch.dtype:
        return self.spadn.kernel_params.dtype

    def project(self) -> None:
        if self.cfg.enabled("ad"):
            self.spadn.project()

    def spatial(self, x: torch.Tensor) -> torch.Tensor:
        """H x W x b -> h x w x b (any band count)."""
        return from_nchw(self.spadn(to_nchw(x.to(self.dtype))))

    def spectral(self, x: torch.Tensor) -> torch.Tensor:
        """any h x w x C -> h x w x c."""
        return from_nchw(self.spedn(to_nchw(x.to(self.dtype))))

    def degraded_pair(self, Y: torch.Tensor, Z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(Z~, Y~) = (spatially degraded MSI, spectrally degraded HSI), both h x w x c."""
        check_pair_shapes(self.cfg, Y, Z)
        return self.spatial(Z), self.spectral(Y)

    def clone(self) -> "PidmModel":
        other = PidmModel(self.cfg).to(self.dtype)
        other.load_state_dict(self.state_dict())
        return other


def check_pair_shapes(cfg: ModelConfig, Y: torch.Tensor, Z: torch.Tensor) -> None:
    if Y.ndim != 3 or Z.ndim != 3:
        raise ShapeError("cubes must be H x W x bands")
    h, w, C = Y.shape
    H, W, c = Z.shape
    if C != cfg.hsi_bands or c != cfg.msi_bands:
        raise ShapeError(f"model expects {cfg.hsi_bands}/{cfg.msi_bands} bands, got {C}/{c}")
    if (H, W) != (h * cfg.scale[0], w * cfg.scale[1]):
        raise ShapeError(f"MSI {H}x{W} and HSI {h}x{w} disagree with scale {cfg.scale}")


def infer_scale(Y_shape, Z_shape) -> tuple[int, int]:
    h, w = Y_shape[:2]
    H, W = Z_shape[:2]
    if H % h or W % w:
        raise ShapeError(f"MSI {H}x{W} is not an integer multiple of HSI {h}x{w}")
    return H // h, W // w


# ------------------------------------------------------------------ file I/O


def to_bytes(model: PidmModel) -> bytes:
    state = model.state_dict()
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    parts = [MAGIC, json.dumps(header, sort_keys=True, separators=(",", ":")).encode(), b"\n"]
    for t in state.values():
        parts.append(t.detach().cpu().numpy().astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> PidmModel:
    if blob[:8] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    nl = blob.find(b"\n", 8)
    if nl < 0:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(blob[8:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {header.get('format_version')}")
    try:
        cfg = ModelConfig.from_dict(header["config"])
        model = PidmModel(cfg)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"bad config: {e}") from None
    state = model.state_dict()
    names = [n for n, _ in header["tensors"]]
    if names != list(state.keys()):
        raise ModelFormatError("tensor list does not match the architecture")
    offset = nl + 1
    loaded = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(blob):
            raise ModelFormatError(f"file truncated inside tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        loaded[name] = torch.from_numpy(arr.astype(np.float32))
        offset = end
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after the last tensor")
    model.load_state_dict(loaded)
    return model


def save(model: PidmModel, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path) -> PidmModel:
    return from_bytes(Path(path).read_bytes())
