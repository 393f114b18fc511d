import numpy as np
import pytest

from mdrwkv.core.gradcheck import gradcheck, gradcheck_module
from mdrwkv.core.tensor import Tensor, backward
from mdrwkv.models.blocks import (
    CrossStageFusion,
    DeformableShift,
    FusionPair,
    MdRwkvBlock,
    SkAttention,
    cross_stage_fusion,
    deformable_shift,
    drop_path,
    sk_attention,
)
from mdrwkv.models.schemas import MdRwkvBlockConfig, SkConfig


def tensor(rng, *shape, dtype=np.float32):
    return Tensor(rng.uniform(-1, 1, shape).astype(dtype))


def block_config(**overrides):
    fields = dict(c_in=4, c_mid=2, drop_path_rate=0.0)
    fields.update(overrides)
    return MdRwkvBlockConfig(**fields)


class TestDropPath:
    def test_zero_rate_is_identity(self, rng):
        x = tensor(rng, 3, 2)
        assert drop_path(x, 0.0, True, rng) is x

    def test_eval_is_identity(self, rng):
        x = tensor(rng, 3, 2)
        assert drop_path(x, 0.7, False, rng) is x

    def test_full_rate_zeros(self, rng):
        assert not np.any(drop_path(tensor(rng, 4, 2), 1.0, True, rng).data)

    def test_rate_out_of_range(self, rng):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            drop_path(tensor(rng, 2, 2), 1.5, True, rng)

    def test_unbiased(self, rng):
        x = Tensor(np.ones((20000, 1), dtype=np.float32))
        out = drop_path(x, 0.5, True, rng).data
        assert abs(out.mean() - 1.0) < 0.05
        # whole samples are either dropped or scaled
        assert set(np.unique(out)) <= {0.0, 2.0}


class TestDeformableShift:
    def test_identity_at_init(self, rng):
        x = tensor(rng, 2, 3, 5, 5)
        assert np.array_equal(DeformableShift(3, rng)(x).data, x.data)

    def test_constant_offset_shifts_left(self):
        x = Tensor(np.arange(1, 7, dtype=np.float32).reshape(1, 1, 2, 3))
        weight = Tensor(np.zeros((2, 1, 3, 3), dtype=np.float32))
        bias = Tensor(np.array([0.0, 1.0], dtype=np.float32))
        out = deformable_shift(x, weight, bias).data
        assert out[0, 0].tolist() == [[2.0, 3.0, 0.0], [5.0, 6.0, 0.0]]

    def test_gradcheck_through_offsets(self, rng):
        inputs = [rng.uniform(-1, 1, (1, 2, 5, 5)), rng.uniform(-0.3, 0.3, (2, 2, 3, 3)), rng.uniform(-0.4, 0.4, 2)]
        result = gradcheck(deformable_shift, inputs)
        assert result.passed, result.per_input


class TestMdRwkvBlock:
    def test_preserves_shape(self, rng):
        for config in (block_config(), block_config(c_in=6, c_mid=3, norm_mode="batch", use_deformable_shift=False)):
            x = tensor(rng, 2, config.c_in, 6, 5)
            assert MdRwkvBlock(config, rng)(x).shape == x.shape

    def test_full_drop_returns_input(self, rng):
        block = MdRwkvBlock(block_config(drop_path_rate=1.0), rng)
        x = tensor(rng, 2, 4, 6, 6)
        assert np.array_equal(block(x).data, x.data)

    def test_eval_deterministic(self, rng):
        block = MdRwkvBlock(block_config(drop_path_rate=0.3), rng).eval()
        x = tensor(rng, 2, 4, 6, 6)
        assert np.array_equal(block(x).data, block(x).data)

    def test_zero_projection_is_identity(self, rng):
        block = MdRwkvBlock(block_config(), rng)
        block.proj_out.weight.data[...] = 0.0
        block.proj_out.bias.data[...] = 0.0
        x = tensor(rng, 1, 4, 6, 6)
        assert np.array_equal(block(x).data, x.data)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="4 input channels"):
            MdRwkvBlock(block_config(), rng)(tensor(rng, 1, 3, 6, 6))

    def test_gradients_match_finite_differences(self, rng):
        block = MdRwkvBlock(block_config(), rng).astype(np.float64)
        block.shift.offset.weight.data[...] = rng.uniform(-0.2, 0.2, block.shift.offset.weight.shape)
        block.shift.offset.bias.data[...] = rng.uniform(-0.3, 0.3, 2)
        x = rng.uniform(-1, 1, (1, 4, 6, 6))

        params = gradcheck_module(block, lambda: block(Tensor(x)))
        assert params.passed, params.per_input
        inputs = gradcheck(block, [x], max_samples=40)
        assert inputs.passed, inputs.per_input

    def test_every_parameter_gets_gradient(self, rng):
        block = MdRwkvBlock(block_config(), rng)
        block.shift.offset.weight.data[...] = rng.uniform(-0.2, 0.2, block.shift.offset.weight.shape)
        out = block(tensor(rng, 2, 4, 6, 6))
        backward((out * Tensor(rng.standard_normal(out.shape))).sum())
        dead = [name for name, p in block.named_parameters() if p.grad is None or not np.any(p.grad)]
        assert dead == []


class TestSkAttention:
    def test_single_branch_is_that_branch(self, rng):
        sk = SkAttention(6, SkConfig(kernel_sizes=[3]), rng)
        x = tensor(rng, 2, 6, 5, 5)
        assert np.allclose(sk(x).data, sk.branches[0](x).data, atol=1e-6)

    def test_equal_logits_average_branches(self, rng):
        sk = SkAttention(6, SkConfig(), rng)
        sk.squeeze.weight.data[...] = 0.0
        sk.squeeze.bias.data[...] = 0.0
        x = tensor(rng, 2, 6, 7, 7)
        mean = (sk.branches[0](x).data + sk.branches[1](x).data) / 2
        assert np.allclose(sk_attention(x, sk).data, mean, atol=1e-6)

    def test_selection_weights_sum_to_one(self, rng):
        sk = SkAttention(16, SkConfig(kernel_sizes=[3, 5, 7]), rng)
        weights = sk.selection_weights(tensor(rng, 3, 16, 6, 6)).data
        assert weights.shape == (3, 3, 16)
        assert np.abs(weights.sum(axis=1) - 1.0).max() < 1e-6

    def test_hidden_width_clamped(self):
        assert SkConfig().hidden_channels(16) == 4
        assert SkConfig().hidden_channels(64) == 8

    def test_gradcheck_module(self, rng):
        sk = SkAttention(4, SkConfig(), rng).astype(np.float64)
        x = Tensor(rng.uniform(-1, 1, (1, 4, 8, 8)))
        result = gradcheck_module(sk, lambda: sk(x))
        assert result.passed, result.per_input

    def test_gradcheck_input(self, rng):
        sk = SkAttention(4, SkConfig(), rng).astype(np.float64)
        result = gradcheck(sk, [rng.uniform(-1, 1, (1, 4, 8, 8))], max_samples=40)
        assert result.passed, result.per_input

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            SkConfig(kernel_sizes=[3, 4])


class TestCrossStageFusion:
    def ones(self, *shape, value=1.0):
        return Tensor(np.full(shape, value, dtype=np.float32))

    def test_collapse_to_low(self, rng):
        f_low, f_high = tensor(rng, 1, 3, 4, 4), tensor(rng, 1, 3, 4, 4)
        out = CrossStageFusion.fuse(f_low, f_high, self.ones(1, 1, 4, 4), self.ones(1, 1, 4, 4, value=0.0), self.ones(1, 1, 4, 4))
        assert np.array_equal(out.data, f_low.data)

    def test_collapse_to_high(self, rng):
        f_low, f_high = tensor(rng, 1, 3, 4, 4), tensor(rng, 1, 3, 4, 4)
        zero = self.ones(1, 1, 4, 4, value=0.0)
        out = CrossStageFusion.fuse(f_low, f_high, zero, self.ones(1, 1, 4, 4), zero)
        assert np.array_equal(out.data, f_high.data)

    def test_scalar_blend(self):
        out = CrossStageFusion.fuse(
            self.ones(1, 1, 1, 1, value=2.0),
            self.ones(1, 1, 1, 1, value=4.0),
            self.ones(1, 1, 1, 1, value=0.5),
            self.ones(1, 1, 1, 1, value=0.5),
            self.ones(1, 1, 1, 1, value=0.25),
        )
        assert out.item() == pytest.approx(1.75)

    def test_equal_features_ignore_mask(self, rng):
        f = tensor(rng, 2, 3, 4, 4)
        s = Tensor(rng.uniform(0, 1, (2, 1, 4, 4)).astype(np.float32))
        out = CrossStageFusion.fuse(f, f, self.ones(2, 1, 4, 4), self.ones(2, 1, 4, 4), s)
        assert np.abs(out.data - f.data).max() < 1e-6

    def test_forward_shapes_and_mask_range(self, rng):
        fusion = CrossStageFusion(4, 8, rng)
        f_low, f_high = tensor(rng, 2, 4, 8, 8), tensor(rng, 2, 8, 8, 8)
        alpha_l, alpha_h, s = fusion.attention_maps(f_low, f_high)
        assert alpha_l.shape == alpha_h.shape == s.shape == (2, 1, 8, 8)
        assert s.data.min() > 0.0 and s.data.max() < 1.0
        assert cross_stage_fusion(FusionPair(f_low, f_high), fusion).shape == (2, 4, 8, 8)

    def test_spatial_mismatch(self, rng):
        with pytest.raises(ValueError, match="spatial"):
            CrossStageFusion(4, 4, rng)(tensor(rng, 1, 4, 8, 8), tensor(rng, 1, 4, 4, 4))

    def test_gradcheck_module(self, rng):
        fusion = CrossStageFusion(2, 3, rng).astype(np.float64)
        f_low, f_high = Tensor(rng.uniform(-1, 1, (1, 2, 5, 5))), Tensor(rng.uniform(-1, 1, (1, 3, 5, 5)))
        result = gradcheck_module(fusion, lambda: fusion(f_low, f_high))
        assert result.passed, result.per_input
