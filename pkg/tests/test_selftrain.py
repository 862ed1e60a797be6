import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pidm.model import ModelConfig, PidmModel
from pidm.numerics import ShapeError
from pidm.synthetic import make_synthetic
from pidm.selftrain import (TrainConfig, TrainingDiverged, pair_metrics, rmse, self_supervised_loss,
                            ssim, train)


def numpy_ssim(a, b, size=11, sigma=1.5, C1=1e-4, C2=9e-4):
    """Direct windowed SSIM: explicit 2-D Gaussian weights, one window at a time."""
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    vals = []
    H, W, C = a.shape
    for ch in range(C):
        for i in range(H - size + 1):
            for j in range(W - size + 1):
                pa, pb = a[i:i + size, j:j + size, ch], b[i:i + size, j:j + size, ch]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va, vb = (w * pa * pa).sum() - ma ** 2, (w * pb * pb).sum() - mb ** 2
                cov = (w * pa * pb).sum() - ma * mb
                vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


class TestSSIM:
    def test_self_similarity(self):
        A = torch.rand(20, 17, 3, dtype=torch.float64)
        assert abs(float(ssim(A, A)) - 1) < 1e-6

    def test_checkerboard_against_direct_formula(self):
        i, j = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        A = ((i + j) % 2).astype(np.float64)[..., None]
        got = float(ssim(torch.from_numpy(A), torch.from_numpy(1 - A)))
        assert abs(got - numpy_ssim(A, 1 - A)) < 1e-10
        assert got < 0

    def test_random_against_direct_formula(self):
        g = np.random.default_rng(0)
        a, b = g.random((14, 13, 2)), g.random((14, 13, 2))
        assert abs(float(ssim(torch.from_numpy(a), torch.from_numpy(b))) - numpy_ssim(a, b)) < 1e-10

    @given(st.integers(0, 10_000))
    def test_symmetric_and_bounded(self, seed):
        g = torch.Generator().manual_seed(seed)
        A = torch.rand(12, 12, 2, generator=g, dtype=torch.float64)
        B = torch.rand(12, 12, 2, generator=g, dtype=torch.float64)
        s = float(ssim(A, B))
        assert abs(s - float(ssim(B, A))) < 1e-8
        assert -1 <= s <= 1

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            ssim(torch.rand(12, 12, 1), torch.rand(12, 12, 2))
        with pytest.raises(ShapeError):
            ssim(torch.rand(10, 12, 1), torch.rand(10, 12, 1))


def test_rmse_properties():
    A = torch.rand(5, 5, 2, dtype=torch.float64)
    B = torch.rand(5, 5, 2, dtype=torch.float64)
    assert rmse(A, A) == 0.0
    assert rmse(A, B) == rmse(B, A)
    assert abs(rmse(A, A + 0.1) - 0.1) < 1e-12


class TestLoss:
    def test_zero_for_consistent_pair(self):
        model = PidmModel(ModelConfig(2, 2, (2, 2), disable=("pd", "ad", "sm", "sw"))).double()
        with torch.no_grad():
            model.spedn.project.weight.copy_(torch.eye(2))
        Z = torch.rand(32, 32, 2, dtype=torch.float64)
        Y = model.spatial(Z).detach()
        assert abs(float(self_supervised_loss(model, Y, Z))) < 1e-6

    @settings(max_examples=10)
    @given(st.integers(0, 1000))
    def test_range(self, seed):
        g = torch.Generator().manual_seed(seed)
        model = PidmModel(ModelConfig(4, 2, (2, 2), seed=seed))
        Y = torch.rand(12, 12, 4, generator=g)
        Z = torch.rand(24, 24, 2, generator=g)
        assert 0 <= float(self_supervised_loss(model, Y, Z)) <= 2

    def test_ground_truth_model_fits_synthetic_pair(self):
        # Borders dominate tiny scenes, so this uses a realistic extent.
        s = make_synthetic(7, 128, 128, 16, 3, 4)
        assert float(self_supervised_loss(s.model, s.Y, s.Z).detach()) < 0.01

    def test_shape_inconsistency(self, small_scene):
        s = small_scene
        with pytest.raises(ShapeError):
            self_supervised_loss(s.model, s.Y, s.Z[:30])


class TestTrain:
    def test_zero_epochs_is_init(self, small_scene):
        s = small_scene
        model, rep = train(s.Y, s.Z, TrainConfig(epochs=0, seed=4))
        ref = PidmModel(model.cfg)
        assert all(torch.equal(a, b) for a, b in zip(model.state_dict().values(), ref.state_dict().values()))
        assert rep.losses == []

    def test_deterministic(self, small_scene):
        s = small_scene
        a, ra = train(s.Y, s.Z, TrainConfig(epochs=15, seed=2))
        b, rb = train(s.Y, s.Z, TrainConfig(epochs=15, seed=2))
        assert ra.losses == rb.losses
        assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))

    def test_report(self, small_scene):
        s = small_scene
        model, rep = train(s.Y, s.Z, TrainConfig(epochs=5))
        assert len(rep.losses) == 5 and all(math.isfinite(v) for v in rep.losses)
        assert rep.config["epochs"] == 5 and rep.elapsed >= 0
        assert (rep.final_ssim, rep.final_rmse) == pair_metrics(model, s.Y, s.Z)

    def test_input_model_untouched(self, small_scene):
        s = small_scene
        start = PidmModel(ModelConfig(8, 3, (2, 2)))
        snapshot = {k: v.clone() for k, v in start.state_dict().items()}
        train(s.Y, s.Z, TrainConfig(epochs=3), model=start)
        assert all(torch.equal(snapshot[k], v) for k, v in start.state_dict().items())

    def test_frozen_component_unchanged(self, small_scene):
        s = small_scene
        model, _ = train(s.Y, s.Z, TrainConfig(epochs=5, freeze=("pd",)))
        ref = PidmModel(model.cfg)
        for (name, a), b in zip(model.spedn.project.state_dict().items(), ref.spedn.project.state_dict().values()):
            assert torch.equal(a, b), name

    def test_base_configuration_converges(self, small_scene):
        s = small_scene
        _, rep = train(s.Y, s.Z, TrainConfig(epochs=300, disable=("sm", "sw")))
        assert rep.losses[-1] < 0.5 * rep.losses[0]
        assert rep.final_ssim > 0.9
        running = np.minimum.accumulate(rep.losses)
        assert np.all(np.diff(running) <= 0)

    def test_rejects_unnormalized(self, small_scene):
        s = small_scene
        with pytest.raises(ValueError, match="normalized"):
            train(s.Y * 3, s.Z, TrainConfig(epochs=1))

    def test_divergence_reports_epoch(self, small_scene):
        s = small_scene
        with pytest.raises(TrainingDiverged) as info:
            train(s.Y, s.Z, TrainConfig(epochs=20, lr=1e30))
        assert 0 <= info.value.epoch < 20

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(disable=("xx",))
        with pytest.raises(ValueError):
            TrainConfig(full_image=False)
        assert (TrainConfig().epochs, TrainConfig().lr, TrainConfig().kernel_size, TrainConfig().eps,
                TrainConfig().enc_dim) == (2000, 5e-4, 25, 3.0, 32)
