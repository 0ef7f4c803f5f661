"""Plain ViT backbone: shapes, locality contracts, gradient correctness."""

import numpy as np
import pytest
import torch

from plainseg.errors import ConfigError, DataError
from plainseg.model.pyramid import SimpleFeaturePyramid
from plainseg.model.vit import Attention, BackboneConfig, Block, PlainViT

from oracles import directional_derivative, relative_error


def tiny_cfg(**kwargs):
    base = dict(img_size=32, patch_size=8, embed_dim=16, depth=2, num_heads=2,
                window_size=2, global_block_indices=(1,), pyramid_channels=8)
    base.update(kwargs)
    return BackboneConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(img_size=30, patch_size=8)
    with pytest.raises(ConfigError):
        BackboneConfig(embed_dim=30, num_heads=4)
    with pytest.raises(ConfigError):
        tiny_cfg(global_block_indices=(5,))
    assert BackboneConfig(depth=6).global_block_indices == (2, 5)
    assert BackboneConfig(depth=4).global_block_indices == (1, 3)


def test_token_grid_shape():
    torch.manual_seed(0)
    vit = PlainViT(tiny_cfg(img_size=64, embed_dim=96, num_heads=6))
    fm = vit(torch.randn(1, 3, 64, 64))
    assert fm.values.shape == (1, 96, 8, 8)
    assert fm.stride == 8


def test_zero_image_with_zero_projection_gives_pos_embed():
    torch.manual_seed(0)
    vit = PlainViT(tiny_cfg())
    with torch.no_grad():
        vit.patch_embed.weight.zero_()
        vit.patch_embed.bias.zero_()
    tokens = vit.embed(torch.zeros(1, 3, 32, 32))
    assert torch.equal(tokens, vit.pos_embed)


def test_channel_permutation_invariance():
    torch.manual_seed(1)
    vit = PlainViT(tiny_cfg())
    image = torch.randn(1, 3, 32, 32)
    base = vit.embed(image)
    perm = [2, 0, 1]
    with torch.no_grad():
        vit.patch_embed.weight.copy_(vit.patch_embed.weight[:, perm])
    permuted = vit.embed(image[:, perm])
    assert torch.allclose(base, permuted, atol=1e-6)


def test_windowed_block_locality():
    torch.manual_seed(2)
    block = Block(dim=16, num_heads=2, mlp_ratio=4.0, window_size=2,
                  is_global=False).double()
    x = torch.randn(1, 4, 4, 16, dtype=torch.float64)
    base = block(x)
    bumped = x.clone()
    bumped[0, 0, 0, 0] += 0.5  # one channel of a top-left-window token
    out = block(bumped)
    delta = (out - base).abs().sum(dim=-1)[0]
    assert (delta[:2, :2] > 0).any()
    assert torch.all(delta[2:, :] == 0) and torch.all(delta[:, 2:] == 0)


def test_global_block_nonlocality():
    torch.manual_seed(3)
    block = Block(dim=16, num_heads=2, mlp_ratio=4.0, window_size=2,
                  is_global=True).double()
    x = torch.randn(1, 4, 4, 16, dtype=torch.float64)
    base = block(x)
    bumped = x.clone()
    bumped[0, 0, 0, 0] += 0.5
    delta = (block(bumped) - base).abs().sum(dim=-1)[0]
    assert (delta > 0).all()


def test_attention_rows_normalized():
    torch.manual_seed(4)
    attn = Attention(dim=16, num_heads=2)
    x = torch.randn(2, 9, 16)
    _, weights = attn(x, return_attn=True)
    sums = weights.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_forward_deterministic():
    torch.manual_seed(5)
    vit = PlainViT(tiny_cfg())
    image = torch.randn(2, 3, 32, 32)
    a = vit(image).values
    b = vit(image).values
    assert torch.equal(a, b)


def test_batch_independence():
    torch.manual_seed(6)
    vit = PlainViT(tiny_cfg())
    x = torch.randn(2, 3, 32, 32)
    batched = vit(x).values
    single = vit(x[:1]).values
    assert torch.allclose(batched[:1], single, atol=1e-6)


def test_bad_input_shapes():
    vit = PlainViT(tiny_cfg())
    with pytest.raises(DataError):
        vit(torch.zeros(1, 3, 30, 30))
    with pytest.raises(DataError):
        vit(torch.zeros(1, 1, 32, 32))


def test_pos_embed_interpolation():
    torch.manual_seed(7)
    vit = PlainViT(tiny_cfg())
    fm = vit(torch.randn(1, 3, 48, 48))
    assert fm.values.shape[-2:] == (6, 6)
    pe = vit.interpolated_pos_embed(6, 6)
    assert pe.shape == (1, 6, 6, 16)


@pytest.mark.slow
def test_backbone_gradients_match_finite_differences(rng):
    torch.manual_seed(8)
    vit = PlainViT(tiny_cfg()).double()
    image = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    weights = torch.randn(1, 16, 4, 4, dtype=torch.float64)

    def loss_fn():
        return (vit(image).values * weights).sum()

    loss = loss_fn()
    loss.backward()
    params = [p for p in vit.parameters() if p.grad is not None]
    gen = torch.Generator().manual_seed(42)
    for _ in range(6):
        dirs = [torch.randn(p.shape, generator=gen, dtype=torch.float64)
                for p in params]
        analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, dirs))
        numeric = directional_derivative(loss_fn, params, dirs, eps=1e-6)
        assert relative_error(analytic, numeric) < 1e-3


class TestPyramid:
    def test_level_shapes(self):
        torch.manual_seed(9)
        vit = PlainViT(tiny_cfg(img_size=64, embed_dim=96, num_heads=6))
        pyr = SimpleFeaturePyramid(96, 64)
        out = pyr(vit(torch.randn(1, 3, 64, 64)))
        sizes = [tuple(l.values.shape[-2:]) for l in out.levels]
        assert sizes == [(32, 32), (16, 16), (8, 8), (4, 4), (2, 2)]
        assert out.strides == [2, 4, 8, 16, 32]
        assert all(l.values.shape[1] == 64 for l in out.levels)

    def test_constant_input_constant_levels(self):
        torch.manual_seed(10)
        pyr = SimpleFeaturePyramid(4, 3)
        with torch.no_grad():
            # identity-like: every transposed conv averages its input patch,
            # projections average channels, so constants stay constant
            for conv in (pyr.up4_a, pyr.up4_b, pyr.up2):
                conv.weight.fill_(0.25)
                conv.bias.fill_(0.1)
            for proj in pyr.proj:
                proj.weight.fill_(0.5)
                proj.bias.fill_(0.0)
        from plainseg.model.vit import FeatureMap
        fm = FeatureMap(values=torch.full((1, 4, 8, 8), 2.0), stride=8)
        out = pyr(fm)
        for level in out.levels:
            v = level.values.reshape(level.values.shape[1], -1)
            assert torch.allclose(v, v[:, :1].expand_as(v), atol=1e-6)

    def test_gradients_reach_input_from_every_level(self):
        torch.manual_seed(11)
        pyr = SimpleFeaturePyramid(8, 4)
        from plainseg.model.vit import FeatureMap
        for pick in range(5):
            x = torch.randn(1, 8, 8, 8, requires_grad=True)
            out = pyr(FeatureMap(values=x, stride=8))
            loss = (out.levels[pick].values * torch.randn_like(
                out.levels[pick].values)).sum()
            loss.backward()
            assert x.grad is not None and float(x.grad.abs().sum()) > 0

    def test_stride_must_divide(self):
        from plainseg.model.vit import FeatureMap
        pyr = SimpleFeaturePyramid(4, 2)
        with pytest.raises(ConfigError):
            pyr(FeatureMap(values=torch.zeros(1, 4, 8, 8), stride=6))
        with pytest.raises(ConfigError):
            pyr(FeatureMap(values=torch.zeros(1, 4, 6, 6), stride=8))
