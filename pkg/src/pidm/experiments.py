"""End-to-end protocols on synthetic scenes, shared by the acceptance tests and scripts/.

Each function is deterministic given its seed and returns plain numbers, so the
callers only decide thresholds and formatting.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import torch

from .fusion import ModeConfig, ofc_fuse, tsg_fuse, tsg_train
from .metrics import QnrReport, qnr
from .model import ModelConfig, PidmModel
from .selftrain import TrainConfig, pair_metrics, train
from .synthetic import make_synthetic

ALL_COMPONENTS = ("pd", "ad", "sm", "sw")
# base -> +PD -> +AD -> +SM -> +SW, as disable sets
LADDER = (("pd", "ad", "sm", "sw"), ("ad", "sm", "sw"), ("sm", "sw"), ("sw",), ())
LADDER_NAMES = ("base", "+PD", "+AD", "+SM", "+SW")


@dataclass(frozen=True)
class Fixture:
    H: int = 128
    C: int = 16
    c: int = 3
    s: int = 4

    def scene(self, seed: int, **kw):
        return make_synthetic(seed, self.H, self.H, self.C, self.c, self.s, **kw)


# ------------------------------------------------------------------ recovery


def recovery(seed: int = 0, fixture: Fixture = Fixture(256, 31, 3, 4), epochs: int = 2000) -> dict:
    scene = fixture.scene(seed)
    t0 = time.perf_counter()
    _, rep = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, seed=seed))
    return {"ssim": rep.final_ssim, "rmse": rep.final_rmse, "loss": min(rep.losses) if rep.losses else math.nan,
            "final_loss": rep.losses[-1] if rep.losses else math.nan, "elapsed": time.perf_counter() - t0,
            "ground_truth_ssim": pair_metrics(scene.model, scene.Y, scene.Z)[0]}


# ----------------------------------------------------------- identifiability


def canonical_kernel(params) -> tuple[float, float, float, float, float]:
    """(alpha_y, alpha_x, major, minor, beta mod pi) with beta measured for the major axis."""
    ay, ax, dy, dx, beta = (float(v) for v in params)
    if dy < dx:
        dy, dx, beta = dx, dy, beta + math.pi / 2
    return ay, ax, dy, dx, beta % math.pi


def angle_gap(a: float, b: float) -> float:
    """Distance between two orientations modulo pi."""
    d = (a - b) % math.pi
    return min(d, math.pi - d)


# Five scalars only: Adam moves each by roughly lr per step, so the default rate
# cannot cover offsets of 1.5 px within 2000 epochs.
KERNEL_FIT_LR = 5e-3


def identifiability(seed: int, fixture: Fixture = Fixture(), epochs: int = 2000, lr: float = KERNEL_FIT_LR) -> dict:
    """Fit only the kernel: warp and modulation off, band mixing fixed to the known response."""
    disable = ("pd", "sm", "sw")
    scene = fixture.scene(seed, disable=disable)
    model = PidmModel(ModelConfig(fixture.C, fixture.c, (fixture.s, fixture.s), disable=disable, seed=seed))
    with torch.no_grad():
        model.spedn.project.weight.copy_(scene.model.spedn.project.weight)
    model, rep = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, lr=lr, seed=seed, disable=disable,
                                                     freeze=("pd",)), model=model)
    true = canonical_kernel(scene.model.spadn.kernel_params.tolist())
    est = canonical_kernel(model.spadn.kernel_params.tolist())
    d_alpha = max(abs(true[0] - est[0]), abs(true[1] - est[1]))
    d_beta = angle_gap(true[4], est[4])
    return {"true": true, "estimate": est, "d_alpha": d_alpha, "d_beta": d_beta, "ssim": rep.final_ssim}


# -------------------------------------------------------------------- ladder


def ablation_ladder(seed: int, fixture: Fixture = Fixture(), epochs: int = 2000) -> list[float]:
    """Final degraded-pair SSIM for each ladder configuration on one warped, shifted-blur scene."""
    scene = fixture.scene(seed)
    out = []
    for disable in LADDER:
        _, rep = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, seed=seed, disable=disable))
        out.append(rep.final_ssim)
    return out


# -------------------------------------------------------------------- fusion


def train_pair(scene, seed: int, epochs: int) -> tuple[PidmModel, PidmModel]:
    """(full model, fixed-Gaussian + trainable-matrix baseline), both self-trained on the scene."""
    full, _ = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, seed=seed))
    base, _ = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, seed=seed, disable=ALL_COMPONENTS))
    return full, base


def fusion_benefit(seed: int, fixture: Fixture = Fixture(64, 8, 3, 2), epochs: int = 2000,
                   fusion_epochs: int = 300) -> dict:
    """QNR of OFC fusion driven by the trained model vs by the baseline, one shared evaluator."""
    scene = fixture.scene(seed)
    full, base = train_pair(scene, seed, epochs)
    cfg = ModeConfig("ofc", epochs=fusion_epochs, seed=seed)
    scores = {}
    for name, driver in (("pidm", full), ("baseline", base)):
        fused = ofc_fuse(driver, scene.Y, scene.Z, cfg)
        scores[name] = qnr(fused, scene.Y, scene.Z, full)
    return {"pidm": scores["pidm"].qnr, "baseline": scores["baseline"].qnr,
            "reports": {k: v.to_dict() for k, v in scores.items()}}


# The synthetic band blocks are calibrated to their own scene's statistics
# (instance norm inside), so they do not describe the same sensor on other
# scenes. TSG assumes one sensor for all scenes, hence a linear response here.
SENSOR_DISABLE = ("pd",)


def tsg_authenticity(seed: int, fixture: Fixture = Fixture(64, 8, 3, 2), n_aux: int = 3, epochs: int = 2000,
                     fusion_epochs: int = 300, gt_disable=SENSOR_DISABLE) -> dict:
    """TSG with the scene's own degradation vs with the baseline degradation, scored on the held-out scene."""
    scene = fixture.scene(seed, disable=gt_disable)
    aux = [fixture.scene(10_000 + 97 * seed + k).X for k in range(n_aux)]
    base, _ = train(scene.Y, scene.Z, TrainConfig(epochs=epochs, seed=seed, disable=ALL_COMPONENTS))
    cfg = ModeConfig("tsg", epochs=fusion_epochs, seed=seed)
    scores: dict[str, QnrReport] = {}
    for name, driver in (("matched", scene.model), ("mismatched", base)):
        net = tsg_train(driver, aux, cfg)
        scores[name] = qnr(tsg_fuse(net, scene.Y, scene.Z), scene.Y, scene.Z, scene.model)
    return {"matched": scores["matched"].qnr, "mismatched": scores["mismatched"].qnr,
            "reports": {k: v.to_dict() for k, v in scores.items()}}
