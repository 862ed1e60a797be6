"""Cube files, an ENVI subset reader, band compression and PGM previews.

Native cube layout: ``<stem>.bsq`` holds float32 little-endian samples in
band-sequential order; ``<stem>.json`` is the sidecar header with the fields
height, width, bands, dtype, interleave, range_min, range_max and optionally
wavelengths.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch

HEADER_FIELDS = ("height", "width", "bands", "dtype", "interleave", "range_min", "range_max")


class CubeFormatError(ValueError):
    pass


def cube_paths(path: str | Path) -> tuple[Path, Path]:
    """(header, blob) paths for a cube given either file or the bare stem."""
    p = Path(path)
    if p.suffix in (".bsq", ".json"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bsq")


def _as_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    return np.asarray(t)


def write_cube(t, path: str | Path, wavelengths=None, value_range=None) -> tuple[Path, Path]:
    arr = _as_numpy(t).astype(np.float32)
    if arr.ndim != 3:
        raise CubeFormatError(f"cube must be H x W x bands, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise CubeFormatError("cube contains non-finite values")
    H, W, C = arr.shape
    lo, hi = value_range if value_range is not None else (float(arr.min()), float(arr.max()))
    header = {"height": H, "width": W, "bands": C, "dtype": "f32le", "interleave": "bsq",
              "range_min": float(lo), "range_max": float(hi)}
    if wavelengths is not None:
        if len(wavelengths) != C:
            raise CubeFormatError("one wavelength per band required")
        header["wavelengths"] = [float(w) for w in wavelengths]
    hdr_path, blob_path = cube_paths(path)
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(np.ascontiguousarray(arr.transpose(2, 0, 1)).astype("<f4").tobytes())
    hdr_path.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return hdr_path, blob_path


def read_cube_header(path: str | Path) -> dict:
    hdr_path, _ = cube_paths(path)
    try:
        header = json.loads(hdr_path.read_text())
    except FileNotFoundError:
        raise CubeFormatError(f"missing header {hdr_path}") from None
    except json.JSONDecodeError as e:
        raise CubeFormatError(f"unreadable header {hdr_path}: {e}") from None
    missing = [f for f in HEADER_FIELDS if f not in header]
    if missing:
        raise CubeFormatError(f"header {hdr_path} lacks fields {missing}")
    if header["dtype"] != "f32le":
        raise CubeFormatError(f"unknown dtype tag {header['dtype']!r}")
    if header["interleave"] != "bsq":
        raise CubeFormatError(f"unknown interleave tag {header['interleave']!r}")
    return header


def read_cube(path: str | Path) -> torch.Tensor:
    header = read_cube_header(path)
    _, blob_path = cube_paths(path)
    H, W, C = header["height"], header["width"], header["bands"]
    blob = blob_path.read_bytes()
    if len(blob) != H * W * C * 4:
        raise CubeFormatError(f"{blob_path}: expected {H * W * C * 4} bytes for {H}x{W}x{C}, found {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4").reshape(C, H, W).transpose(1, 2, 0)
    if arr.size and (arr.min() < header["range_min"] or arr.max() > header["range_max"]):
        raise CubeFormatError(f"{blob_path}: values fall outside the declared range")
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def normalize_cube(t: torch.Tensor) -> torch.Tensor:
    """Min-max scale the whole cube to [0, 1]."""
    lo, hi = t.min(), t.max()
    if float(hi - lo) == 0.0:
        return torch.zeros_like(t)
    return ((t - lo) / (hi - lo)).clamp_(0.0, 1.0)


# ------------------------------------------------------------------------ ENVI

ENVI_DTYPES = {4: np.float32, 12: np.uint16}
ENVI_DATA_SUFFIXES = ("", ".img", ".dat", ".raw", ".bsq", ".bil", ".bip")


class EnviFormatError(ValueError):
    pass


def parse_envi_header(text: str) -> dict[str, str]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise EnviFormatError("header does not start with 'ENVI'")
    body = "\n".join(lines[1:])
    fields = {}
    for m in re.finditer(r"^\s*([^=\n]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", body, flags=re.M):
        key, value = m.group(1).strip().lower(), m.group(2).strip()
        if value.startswith("{"):
            value = " ".join(value[1:-1].split())
        fields[key] = value
    return fields


def _envi_int(fields: dict, key: str, default=None) -> int:
    if key not in fields:
        if default is None:
            raise EnviFormatError(f"header lacks required field {key!r}")
        return default
    try:
        return int(fields[key])
    except ValueError:
        raise EnviFormatError(f"field {key!r} is not an integer: {fields[key]!r}") from None


def _envi_data_path(header_path: Path, fields: dict) -> Path:
    if "data file" in fields:
        return header_path.parent / fields["data file"]
    stem = header_path.with_suffix("")
    for suffix in ENVI_DATA_SUFFIXES:
        cand = stem.with_name(stem.name + suffix)
        if cand.exists() and cand != header_path:
            return cand
    raise EnviFormatError(f"no data file found next to {header_path}")


def read_envi(header_path: str | Path, scale: bool = True) -> torch.Tensor:
    """Read a BSQ/BIL/BIP cube (data type 4 or 12) as float32 H x W x bands.

    With ``scale`` the values are mapped to [0, 1], using ``reflectance scale
    factor`` as the upper bound when declared and the observed range otherwise.
    """
    header_path = Path(header_path)
    fields = parse_envi_header(header_path.read_text())
    samples = _envi_int(fields, "samples")
    lines = _envi_int(fields, "lines")
    bands = _envi_int(fields, "bands")
    code = _envi_int(fields, "data type")
    if code not in ENVI_DTYPES:
        raise EnviFormatError(f"unsupported ENVI data type {code} (supported: 4, 12)")
    order = _envi_int(fields, "byte order", 0)
    offset = _envi_int(fields, "header offset", 0)
    interleave = fields.get("interleave", "").lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise EnviFormatError(f"unsupported interleave {interleave!r}")
    dt = np.dtype(ENVI_DTYPES[code]).newbyteorder(">" if order == 1 else "<")
    raw = _envi_data_path(header_path, fields).read_bytes()
    n = samples * lines * bands
    if len(raw) - offset < n * dt.itemsize:
        raise EnviFormatError(f"data file holds {len(raw) - offset} bytes, need {n * dt.itemsize}")
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=offset).astype(np.float64)
    if interleave == "bsq":
        arr = arr.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        arr = arr.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:
        arr = arr.reshape(lines, samples, bands)
    if scale:
        if "reflectance scale factor" in fields:
            arr = arr / float(fields["reflectance scale factor"])
        else:
            lo, hi = arr.min(), arr.max()
            arr = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
        arr = np.clip(arr, 0.0, 1.0)
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


# --------------------------------------------------------------------- helpers


def compress_bands(cube, target: int) -> torch.Tensor:
    """Average ``target`` contiguous, near-equal groups of bands."""
    t = torch.as_tensor(cube)
    C = t.shape[-1]
    if target <= 0:
        raise ValueError("target band count must be positive")
    if target > C:
        raise ValueError(f"cannot compress {C} bands into {target}")
    groups = np.array_split(np.arange(C), target)
    return torch.stack([t[..., g[0]:g[-1] + 1].mean(dim=-1) for g in groups], dim=-1)


def write_pgm(band, path: str | Path) -> None:
    """8-bit binary graymap of one band, values clipped to [0, 1]."""
    a = _as_numpy(band).astype(np.float64)
    img = np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
    H, W = img.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode() + img.tobytes())
