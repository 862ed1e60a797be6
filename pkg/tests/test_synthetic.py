import numpy as np
import pytest
import torch

from pidm.numerics import ShapeError
from pidm.spadn import generate_warp_field, spadn_forward
from pidm.spedn import BandMatrix, spedn_forward
from pidm.synthetic import make_synthetic


def test_same_seed_identical():
    a, b = make_synthetic(3, 32, 32, 6, 2, 2), make_synthetic(3, 32, 32, 6, 2, 2)
    for name in ("X", "Y", "Z"):
        assert torch.equal(getattr(a, name), getattr(b, name))
    assert all(torch.equal(x, y) for x, y in zip(a.model.state_dict().values(), b.model.state_dict().values()))


def test_different_seeds_differ():
    assert not torch.equal(make_synthetic(3, 32, 32, 6, 2, 2).X, make_synthetic(4, 32, 32, 6, 2, 2).X)


def test_pair_regenerates_from_model(small_scene):
    s = small_scene
    with torch.no_grad():
        assert torch.equal(spadn_forward(s.X, s.model), s.Y)
        assert torch.equal(spedn_forward(s.X, s.model), s.Z)


def test_constant_spectrum_gives_flat_hsi():
    s = make_synthetic(5, 32, 32, 6, 2, 2, constant_spectrum=True, noise=0.0)
    spread = (s.Y - s.Y[:1, :1]).abs().amax()
    assert float(spread) < 1e-6


def test_ground_truth_components():
    s = make_synthetic(2, 64, 64, 8, 3, 4)
    p = s.model.spadn.kernel_params
    assert float(p[2:4].min()) > 0 and float(p[0:2].abs().max()) <= 25 / 4
    field = generate_warp_field(s.X, s.model)
    assert 0 < float(field.abs().max()) <= 3.0


def test_disabled_components_follow_switches():
    s = make_synthetic(2, 32, 32, 8, 3, 2, disable=("pd", "sw"))
    assert isinstance(s.model.spedn.project, BandMatrix)
    w = s.model.spedn.project.weight
    assert float(w.min()) >= 0 and torch.allclose(w.sum(1), torch.ones(3), atol=1e-5)
    assert float(generate_warp_field(s.X, s.model).abs().max()) == 0.0


def test_divisibility():
    with pytest.raises(ShapeError):
        make_synthetic(0, 30, 32, 4, 2, 4)


def test_value_ranges_over_100_seeds():
    for seed in range(100):
        s = make_synthetic(seed, 16, 16, 6, 2, 2)
        for name in ("X", "Y", "Z"):
            t = getattr(s, name)
            assert 0.0 <= float(t.min()) and float(t.max()) <= 1.0, (seed, name)
            assert np.isfinite(t.numpy()).all()
