"""Command-line entry points: train, degrade, eval, qnr, synth, fuse.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every command writes its outputs plus one ``manifest.json``-style record;
nothing time-dependent goes into files, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .dataio import (CubeFormatError, EnviFormatError, compress_bands, cube_paths, normalize_cube,
                     read_cube, read_envi, write_cube, write_pgm)
from .fusion import ModeConfig, ofc_fuse, tsg_fuse, tsg_train
from .metrics import MetricConfigError, QNR_BLOCK, pair_report, qnr
from .model import COMPONENTS, ModelFormatError, load, save
from .numerics import ShapeError
from .selftrain import TrainConfig, train
from .synthetic import make_synthetic

log = logging.getLogger("pidm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers


def digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(_input_files(path)):
        h.update(p.read_bytes())
    return h.hexdigest()


def _input_files(path: Path) -> list[Path]:
    if path.suffix == ".hdr":
        return [path]
    hdr, blob = cube_paths(path)
    if hdr.exists() and blob.exists():
        return [hdr, blob]
    return [path]


def load_cube(path: str) -> torch.Tensor:
    """Native cube (stem, .bsq or .json) or ENVI header; rescaled to [0, 1] only if it falls outside."""
    p = Path(path)
    t = read_envi(p) if p.suffix == ".hdr" else read_cube(p)
    if float(t.min()) < 0.0 or float(t.max()) > 1.0:
        log.warning("%s lies outside [0, 1]; applying min-max normalization", path)
        t = normalize_cube(t)
    return t


def save_cube(t: torch.Tensor, path: Path, outputs: list[str]) -> None:
    hdr, blob = write_cube(t.detach(), path)
    preview = hdr.with_suffix(".pgm")
    write_pgm(t[..., t.shape[2] // 2], preview)
    outputs.extend(str(p) for p in (hdr, blob, preview))


def write_json(obj, path: Path, outputs: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True) + "\n")
    outputs.append(str(path))


def write_manifest(path: Path, command: str, config: dict, seed, inputs: dict[str, str], outputs: list[str]) -> None:
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": v, "sha256": digest(Path(v))} for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "version": __version__,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def parse_disable(text: str) -> tuple[str, ...]:
    parts = tuple(p for p in text.replace(" ", "").split(",") if p)
    bad = [p for p in parts if p not in COMPONENTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown component(s) {bad}; choose from {','.join(COMPONENTS)}")
    return parts


def parse_shape(text: str) -> tuple[int, int, int]:
    try:
        H, W, C = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 256x256x31, got {text!r}") from None
    return H, W, C


# ---------------------------------------------------------------- commands


def cmd_train(a) -> int:
    Y, Z = load_cube(a.hsi), load_cube(a.msi)
    cfg = TrainConfig(epochs=a.epochs, lr=a.lr, seed=a.seed, kernel_size=a.kernel_size, eps=a.eps,
                      enc_dim=a.enc_dim, disable=a.disable, log_every=a.log_every)
    model, report = train(Y, Z, cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    save(model, out / "model.pidm")
    outputs.append(str(out / "model.pidm"))
    summary = {"final_ssim": report.final_ssim, "final_rmse": report.final_rmse,
               "final_loss": report.losses[-1] if report.losses else None, "epochs": cfg.epochs}
    write_json(summary, out / "train_report.json", outputs)
    (out / "loss.tsv").write_text("epoch\tloss\n" + "".join(f"{i}\t{v:.8g}\n" for i, v in enumerate(report.losses)))
    outputs.append(str(out / "loss.tsv"))
    write_manifest(out / "manifest.json", "train", report.config, a.seed, {"hsi": a.hsi, "msi": a.msi}, outputs)
    log.info("trained in %.1fs", report.elapsed)
    emit(summary)
    return 0


def cmd_degrade(a) -> int:
    model = load(a.model)
    X = load_cube(a.input)
    expected = model.cfg.hsi_bands if a.mode == "spectral" else None
    if expected is not None and X.shape[2] != expected:
        raise ShapeError(f"spectral degradation needs {expected} bands, input has {X.shape[2]}")
    with torch.no_grad():
        out = model.spatial(X) if a.mode == "spatial" else model.spectral(X)
    outputs: list[str] = []
    dest = Path(a.out)
    save_cube(out, dest, outputs)
    hdr, _ = cube_paths(dest)
    write_manifest(hdr.with_suffix(".manifest.json"), "degrade", {"mode": a.mode}, None,
                   {"model": a.model, "input": a.input}, outputs)
    emit({"mode": a.mode, "shape": list(out.shape)})
    return 0


def cmd_eval(a) -> int:
    model = load(a.model)
    rep = pair_report(model, load_cube(a.hsi), load_cube(a.msi))
    record = rep.to_dict()
    if a.out:
        outputs: list[str] = []
        out = Path(a.out)
        write_json(record, out / "pair_report.json", outputs)
        write_manifest(out / "manifest.json", "eval", {}, None,
                       {"model": a.model, "hsi": a.hsi, "msi": a.msi}, outputs)
    emit(record)
    return 0


def cmd_qnr(a) -> int:
    model = load(a.model)
    rep = qnr(load_cube(a.fused), load_cube(a.hsi), load_cube(a.msi), model, block=a.block)
    record = rep.to_dict()
    if a.out:
        outputs: list[str] = []
        out = Path(a.out)
        write_json(record, out / "qnr_report.json", outputs)
        write_manifest(out / "manifest.json", "qnr", {"block": a.block}, None,
                       {"fused": a.fused, "model": a.model, "hsi": a.hsi, "msi": a.msi}, outputs)
    emit(record)
    return 0


def cmd_synth(a) -> int:
    H, W, C = a.shape
    scene = make_synthetic(a.seed, H, W, C, a.msi_bands, a.scale)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    for name, t in (("X", scene.X), ("Y", scene.Y), ("Z", scene.Z)):
        save_cube(t, out / name, outputs)
    save(scene.model, out / "ground_truth.pidm")
    outputs.append(str(out / "ground_truth.pidm"))
    config = {"shape": [H, W, C], "msi_bands": a.msi_bands, "scale": a.scale}
    write_manifest(out / "manifest.json", "synth", config, a.seed, {}, outputs)
    emit({"seed": a.seed, "X": [H, W, C], "Y": list(scene.Y.shape), "Z": list(scene.Z.shape)})
    return 0


def cmd_fuse(a) -> int:
    model = load(a.model)
    Y, Z = load_cube(a.hsi), load_cube(a.msi)
    cfg = ModeConfig(mode=a.mode, epochs=a.epochs, lr=a.lr, samples=a.samples, seed=a.seed)
    inputs = {"model": a.model, "hsi": a.hsi, "msi": a.msi}
    if a.mode == "ofc":
        fused = ofc_fuse(model, Y, Z, cfg)
    else:
        if not a.aux:
            raise UsageError("--mode tsg needs at least one --aux cube")
        aux = []
        for i, path in enumerate(a.aux):
            X = load_cube(path)
            if X.shape[2] > model.cfg.hsi_bands:
                X = compress_bands(X, model.cfg.hsi_bands)
            aux.append(X)
            inputs[f"aux{i}"] = path
        fused = tsg_fuse(tsg_train(model, aux, cfg), Y, Z)
    rep = qnr(fused, Y, Z, model, block=a.block)
    outputs: list[str] = []
    dest = Path(a.out)
    save_cube(fused, dest, outputs)
    hdr, _ = cube_paths(dest)
    write_json(rep.to_dict(), hdr.with_suffix(".qnr.json"), outputs)
    config = {"mode": a.mode, "epochs": a.epochs, "lr": a.lr, "samples": a.samples, "block": a.block}
    write_manifest(hdr.with_suffix(".manifest.json"), "fuse", config, a.seed, inputs, outputs)
    emit({"shape": list(fused.shape), **rep.to_dict()})
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pidm", description="Learned spatial/spectral degradation models for HSI-MSI fusion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="self-supervised training on an (HSI, MSI) pair")
    t.add_argument("--hsi", required=True)
    t.add_argument("--msi", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--kernel-size", type=int, default=25)
    t.add_argument("--eps", type=float, default=3.0)
    t.add_argument("--enc-dim", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--disable", type=parse_disable, default=(), help="comma list from pd,ad,sm,sw")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("degrade", help="apply the spatial or spectral degradation to a cube")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--mode", choices=("spatial", "spectral"), default="spatial")
    d.add_argument("--out", required=True, help="output cube stem")
    d.set_defaults(func=cmd_degrade)

    e = sub.add_parser("eval", help="SSIM/RMSE between the two degraded images")
    e.add_argument("--model", required=True)
    e.add_argument("--hsi", required=True)
    e.add_argument("--msi", required=True)
    e.add_argument("--out", help="directory for the report record")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("qnr", help="no-reference quality of a fused cube")
    q.add_argument("--fused", required=True)
    q.add_argument("--hsi", required=True)
    q.add_argument("--msi", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--block", type=int, default=QNR_BLOCK)
    q.add_argument("--out", help="directory for the report record")
    q.set_defaults(func=cmd_qnr)

    s = sub.add_parser("synth", help="write a synthetic scene and its ground-truth model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shape", type=parse_shape, default=(256, 256, 31), help="HxWxC of the HR-HSI")
    s.add_argument("--msi-bands", type=int, default=3)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fuse", help="fuse an (HSI, MSI) pair with the reference network")
    f.add_argument("--model", required=True)
    f.add_argument("--hsi", required=True)
    f.add_argument("--msi", required=True)
    f.add_argument("--mode", choices=("tsg", "ofc"), default="ofc")
    f.add_argument("--aux", nargs="*", default=[], help="auxiliary HR-HSI cubes (tsg mode)")
    f.add_argument("--epochs", type=int, default=300)
    f.add_argument("--lr", type=float, default=1e-3)
    f.add_argument("--samples", type=int, default=0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--block", type=int, default=QNR_BLOCK)
    f.add_argument("--out", required=True, help="output cube stem")
    f.set_defaults(func=cmd_fuse)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, MetricConfigError) as e:
        print(f"pidm {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"pidm {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, CubeFormatError, EnviFormatError, ModelFormatError, OSError, ValueError) as e:
        print(f"pidm {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
