import math

import pytest
import torch

from pidm.numerics import AdamState, ShapeError, adam_step
from pidm.spedn import (BandBlocks, SpeDN, band_project, encode_positions, make_grid, modulate,
                        spedn_forward)


def make_spedn(C=6, c=3, seed=0, **kw):
    m = SpeDN(C, c, **kw).double()
    m.reset(torch.Generator().manual_seed(seed))
    return m


def perturb(module, seed=1, amplitude=0.1):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_((torch.rand(p.shape, generator=g, dtype=p.dtype) - 0.5) * 2 * amplitude)


def x_rand(h, w, C, seed=0):
    return torch.rand(h, w, C, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


class TestGrid:
    def test_values(self):
        assert make_grid(2, 3)[:, 0, 0].tolist() == [-1.0, 1.0]
        assert make_grid(3, 3)[:, 0, 0].tolist() == [-1.0, 0.0, 1.0]
        assert make_grid(5, 2)[1, 0, 0] == -0.5
        g = make_grid(7, 4)
        assert g[0, 0, 1] == -1 and g[0, -1, 1] == 1

    def test_degenerate(self):
        with pytest.raises(ShapeError):
            make_grid(2, 1)


class TestEncoding:
    def test_pointwise_across_sizes(self):
        m = make_spedn()
        small = encode_positions(make_grid(3, 3), m)
        big = encode_positions(make_grid(5, 5), m)
        torch.testing.assert_close(big[::2, ::2], small, atol=1e-13, rtol=0)

    def test_deterministic(self):
        a = encode_positions(make_grid(8, 8), make_spedn(seed=3))
        b = encode_positions(make_grid(8, 8), make_spedn(seed=3))
        assert torch.equal(a, b) and a.shape == (8, 8, 32)

    def test_zero_weights_give_bias(self):
        m = make_spedn()
        with torch.no_grad():
            m.encoder.conv1.weight.zero_()
            m.encoder.conv2.weight.zero_()
        enc = encode_positions(make_grid(4, 6), m)
        assert torch.equal(enc, m.encoder.conv2.bias.detach().expand(4, 6, 32))


class TestModulate:
    def test_identity_at_init(self):
        m = make_spedn()
        x = x_rand(8, 8, 6)
        assert torch.equal(modulate(x, encode_positions(make_grid(8, 8), m), m), x)

    def test_translation_equivariance(self):
        # Instance norm pools over the whole image, so the shift must be a pure
        # permutation of every layer's activations: content sits in a patch
        # surrounded by a constant margin wider than the 7x7 receptive field.
        m = make_spedn()
        perturb(m.modulator)
        x = torch.full((20, 20, 6), 0.4, dtype=torch.float64)
        enc = torch.full((20, 20, 32), -0.2, dtype=torch.float64)
        x[6:12, 5:11] = x_rand(6, 6, 6)
        enc[6:12, 5:11] = x_rand(6, 6, 32, seed=1)
        out = modulate(x, enc, m)
        shifted = modulate(torch.roll(x, (2, 3), (0, 1)), torch.roll(enc, (2, 3), (0, 1)), m)
        torch.testing.assert_close(shifted, torch.roll(out, (2, 3), (0, 1)), atol=1e-12, rtol=0)

    def test_extent_mismatch(self):
        m = make_spedn()
        with pytest.raises(ShapeError):
            modulate(x_rand(8, 8, 6), encode_positions(make_grid(8, 7), m), m)


def reference_blocks(x, blocks: BandBlocks):
    """Per-band loop written out with explicit matmuls, erf-GELU and instance norm."""
    C = x.shape[2]
    flat = x.reshape(-1, C)
    outs = []
    for n in range(blocks.bands_out):
        sl = blocks.block_slices(n)
        W1 = blocks.first.weight[sl, :, 0, 0]
        h = flat @ W1.T + blocks.first.bias[sl]
        mu = h.mean(0)
        var = ((h - mu) ** 2).mean(0)
        h = (h - mu) / torch.sqrt(var + 1e-5) * blocks.norm.scale[sl] + blocks.norm.shift[sl]
        h = h * 0.5 * (1 + torch.erf(h / math.sqrt(2)))
        outs.append(h @ blocks.last.weight[n, :, 0, 0] + blocks.last.bias[n])
    return torch.stack(outs, -1).reshape(x.shape[0], x.shape[1], -1)


class TestBandProject:
    def test_matches_loop(self):
        m = make_spedn(6, 3, modulation=False)
        x = x_rand(8, 8, 6)
        with torch.no_grad():
            torch.testing.assert_close(band_project(x, m), reference_blocks(x, m.project), atol=1e-12, rtol=0)

    def test_hand_set_band_average(self):
        x = x_rand(8, 8, 5)
        avg = x.mean(-1)
        m = make_spedn(5, 1, modulation=False)
        b = m.project
        with torch.no_grad():
            for t in (b.first.weight, b.first.bias, b.last.weight, b.last.bias, b.norm.scale, b.norm.shift):
                t.zero_()
            b.first.weight[0, :, 0, 0] = 1 / 5
            b.norm.scale[0] = math.sqrt(float(avg.var(unbiased=False)) + 1e-5)
            b.norm.shift[0] = float(avg.mean()) + 10
            b.last.weight[0, 0, 0, 0] = 1
            b.last.bias[0] = -10
        torch.testing.assert_close(band_project(x, m)[..., 0], avg, atol=1e-12, rtol=0)

    def test_block_independence(self):
        m = make_spedn(6, 3, modulation=False)
        x = x_rand(8, 8, 6)
        before = band_project(x, m).detach()
        b = m.project
        sl = b.block_slices(1)
        with torch.no_grad():
            b.first.weight[sl] += 0.3
            b.norm.scale[sl] *= 2
            b.last.weight[1] -= 0.5
            b.last.bias[1] += 1
        after = band_project(x, m).detach()
        assert torch.equal(after[..., 0], before[..., 0]) and torch.equal(after[..., 2], before[..., 2])
        assert not torch.equal(after[..., 1], before[..., 1])

    def test_gradient_partition(self):
        m = make_spedn(6, 3, modulation=False)
        x = x_rand(8, 8, 6)
        before = band_project(x, m).detach()
        params = list(m.project.parameters())
        band_project(x, m).pow(2).sum().backward()
        b, keep = m.project, 2
        sl = b.block_slices(keep)
        for t in (b.first.weight, b.first.bias, b.norm.scale, b.norm.shift):
            mask = torch.zeros_like(t.grad)
            mask[sl] = 1
            t.grad *= mask
        for t in (b.last.weight, b.last.bias):
            mask = torch.zeros_like(t.grad)
            mask[keep] = 1
            t.grad *= mask
        adam_step(params, AdamState(lr=1e-2))
        after = band_project(x, m).detach()
        assert torch.equal(after[..., :2], before[..., :2])
        assert not torch.equal(after[..., 2], before[..., 2])


class TestForward:
    def test_shape_and_scales(self):
        m = make_spedn(31, 3)
        assert spedn_forward(x_rand(16, 16, 31), m).shape == (16, 16, 3)
        assert spedn_forward(x_rand(40, 24, 31), m).shape == (40, 24, 3)

    def test_init_reduces_to_band_project(self):
        m = make_spedn()
        x = x_rand(8, 8, 6)
        assert torch.equal(spedn_forward(x, m), band_project(x, m))

    def test_scripted_pipeline(self):
        m = make_spedn()
        perturb(m)
        x = x_rand(12, 10, 6)
        ref = band_project(modulate(x, encode_positions(make_grid(12, 10), m), m), m)
        assert torch.equal(spedn_forward(x, m), ref)

    def test_band_mismatch(self):
        with pytest.raises(ShapeError):
            spedn_forward(x_rand(8, 8, 5), make_spedn())

    def test_matrix_substitute(self):
        m = make_spedn(4, 2, parallel=False, modulation=False)
        x = x_rand(5, 5, 4)
        torch.testing.assert_close(spedn_forward(x, m), x.mean(-1, keepdim=True).expand(5, 5, 2), atol=1e-14, rtol=0)
