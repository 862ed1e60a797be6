import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pidm.kernels import DownsampleSpec, blur_and_decimate, generate_kernel
from pidm.numerics import ShapeError, pixel_grid, grid_sample_bilinear
from pidm.spadn import (SpaDN, apply_warp, generate_warp_field, spadn_forward, truncate)


def make_spadn(scale=(4, 4), seed=0, **kw):
    m = SpaDN(scale, **kw).double()
    m.reset(torch.Generator().manual_seed(seed))
    return m


def randomize_head(m, seed=1, amplitude=0.05):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for t in (m.warp_gen.head.weight, m.warp_gen.head.bias):
            t.copy_((torch.rand(t.shape, generator=g, dtype=torch.float64) - 0.5) * 2 * amplitude)


class TestTruncate:
    def test_examples(self):
        t = torch.tensor([2.5, -4.0, 3.0, -3.0, 3.0000001], dtype=torch.float64)
        assert truncate(t, 3.0).tolist() == [2.5, 0.0, 3.0, -3.0, 0.0]

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(0.1, 10))
    def test_bounded(self, vals, eps):
        out = truncate(torch.tensor(vals, dtype=torch.float64), eps)
        assert bool((out.abs() <= eps).all())

    def test_literal_subderivative(self):
        t = torch.tensor([1.0, 5.0, -2.0], dtype=torch.float64, requires_grad=True)
        truncate(t, 3.0).sum().backward()
        assert t.grad.tolist() == [1.0, 0.0, 1.0]


class TestWarpField:
    def test_zero_at_init(self):
        img = torch.rand(32, 32, 3, dtype=torch.float64)
        f = generate_warp_field(img, make_spadn())
        assert f.shape == (32, 32, 2) and bool((f == 0).all())

    def test_bounded_after_random_head(self):
        m = make_spadn()
        randomize_head(m, amplitude=5.0)
        f = generate_warp_field(torch.rand(32, 32, 3, dtype=torch.float64), m)
        assert float(f.abs().max()) <= 3.0

    def test_deterministic(self):
        img = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
        fields = []
        for _ in range(2):
            m = make_spadn(seed=5)
            randomize_head(m)
            fields.append(generate_warp_field(img, m))
        assert torch.equal(fields[0], fields[1])

    def test_channel_count_agnostic(self):
        m = make_spadn()
        randomize_head(m)
        a = torch.rand(16, 16, 3, dtype=torch.float64)
        # a 6-band cube with the same channel mean
        b = torch.cat((a, a.flip(-1)), dim=-1)
        torch.testing.assert_close(generate_warp_field(a, m), generate_warp_field(b, m), atol=1e-12, rtol=0)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            generate_warp_field(torch.rand(1, 8, 1), make_spadn())


class TestApplyWarp:
    def test_zero_field(self):
        img = torch.rand(9, 7, 2, dtype=torch.float64)
        # equal up to the rounding of the coordinate normalization inside grid_sample
        torch.testing.assert_close(apply_warp(img, torch.zeros(9, 7, 2, dtype=torch.float64)), img, atol=1e-14, rtol=0)

    def test_constant_row_shift(self):
        img = torch.rand(9, 7, 2, dtype=torch.float64)
        field = torch.zeros(9, 7, 2, dtype=torch.float64)
        field[..., 0] = 1
        out = apply_warp(img, field)
        torch.testing.assert_close(out[:-1], img[1:], atol=1e-12, rtol=0)

    def test_same_as_grid_sample_oracle(self):
        g = torch.Generator().manual_seed(3)
        img = torch.rand(10, 10, 2, generator=g, dtype=torch.float64)
        field = (torch.rand(10, 10, 2, generator=g, dtype=torch.float64) - 0.5) * 3
        ref = grid_sample_bilinear(img, pixel_grid(10, 10, torch.float64) + field)
        assert torch.equal(apply_warp(img, field), ref)

    def test_warp_unwarp_round_trip(self):
        H = W = 48
        yy, xx = torch.meshgrid(torch.arange(H, dtype=torch.float64), torch.arange(W, dtype=torch.float64), indexing="ij")
        img = (torch.sin(yy / 5) * torch.cos(xx / 7))[..., None] * 0.5 + 0.5
        field = torch.stack((0.8 * torch.sin(xx / 9), 0.8 * torch.cos(yy / 11)), dim=-1)
        warped = apply_warp(img, field)
        # first-order inverse of a smooth field: sample the forward field at the warped position
        inv = -grid_sample_bilinear(field, pixel_grid(H, W, torch.float64) - field)
        back = apply_warp(warped, inv)
        interior = (slice(4, -4), slice(4, -4))
        err = float((back[interior] - img[interior]).abs().max())
        assert err < 0.02

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_warp(torch.rand(8, 8, 1), torch.zeros(8, 7, 2))


class TestSpadnForward:
    def test_shape(self):
        out = spadn_forward(torch.rand(64, 64, 3, dtype=torch.float64), make_spadn())
        assert out.shape == (16, 16, 3)

    def test_init_equals_blur_decimate(self):
        img = torch.rand(32, 32, 3, dtype=torch.float64)
        m = make_spadn()
        ref = blur_and_decimate(img, generate_kernel(m.kernel_params.detach(), 25), DownsampleSpec(4, 4))
        torch.testing.assert_close(spadn_forward(img, m), ref, atol=1e-14, rtol=0)

    def test_identity_configuration(self):
        m = make_spadn(scale=(1, 1), kernel_size=5)
        with torch.no_grad():
            m.kernel_params.copy_(torch.tensor([0, 0, 0.1, 0.1, 0], dtype=torch.float64))
        # with delta read as a variance, 0.1 still leaves ~2.6% of the mass off-centre,
        # so the identity holds to 1e-3 for band-limited images
        yy, xx = torch.meshgrid(torch.arange(16.0), torch.arange(16.0), indexing="ij")
        img = torch.stack((torch.sin(yy / 8) * torch.cos(xx / 10), torch.cos(yy / 9 + xx / 12)), -1).double() * 0.5 + 0.5
        assert float((spadn_forward(img, m) - img).abs().max()) < 1e-3

    def test_matches_scripted_pipeline(self):
        g = torch.Generator().manual_seed(4)
        img = torch.rand(32, 32, 3, generator=g, dtype=torch.float64)
        m = make_spadn(scale=(2, 2))
        randomize_head(m, amplitude=0.2)
        with torch.no_grad():
            m.kernel_params.copy_(torch.tensor([0.5, -1.0, 2.0, 1.2, 0.3], dtype=torch.float64))
        field = generate_warp_field(img, m)
        ref = blur_and_decimate(apply_warp(img, field), generate_kernel(m.kernel_params.detach(), 25),
                                DownsampleSpec(2, 2))
        assert torch.equal(spadn_forward(img, m), ref)

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            spadn_forward(torch.rand(30, 32, 3, dtype=torch.float64), make_spadn())

    def test_ablated_kernel_is_buffer(self):
        m = make_spadn(adaptive_kernel=False, warp=False)
        assert "kernel_params" not in dict(m.named_parameters())
        assert m.kernel_params.tolist() == [0.0, 0.0, 3.0, 3.0, 0.0]
        assert m.warp_gen is None
