import inspect

import numpy as np
import pytest

from mdrwkv.core import ops
from mdrwkv.core.gradcheck import gradcheck, gradcheck_module
from mdrwkv.core.nn import Conv2d, DepthwiseSeparableConv2d, Module, Norm2d, Parameter
from mdrwkv.core.tensor import Tensor, backward, no_grad


def uniform(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def t(array, grad=False):
    return Tensor(np.asarray(array, dtype=np.float32), requires_grad=grad)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = t(uniform(rng, 2, 3, 5, 5))
        w = t(np.eye(3).reshape(3, 3, 1, 1))
        assert np.array_equal(ops.conv2d(x, w).data, x.data)

    def test_constant_input_window_sum(self):
        x = t(np.full((1, 1, 5, 5), 2.0))
        w = t(np.ones((1, 1, 3, 3)))
        out = ops.conv2d(x, w, padding=1).data
        assert np.allclose(out[0, 0, 1:-1, 1:-1], 18.0)
        assert out[0, 0, 0, 0] == pytest.approx(8.0)

    def test_strided_output_shape(self, rng):
        x = t(uniform(rng, 1, 1, 5, 5))
        w = t(uniform(rng, 6, 1, 3, 3))
        assert ops.conv2d(x, w, stride=2, padding=1).shape == (1, 6, 3, 3)

    def test_channel_mismatch_names_both_shapes(self, rng):
        x = t(uniform(rng, 1, 3, 5, 5))
        w = t(uniform(rng, 4, 2, 3, 3))
        with pytest.raises(ValueError, match=r"\(1, 3, 5, 5\).*\(4, 2, 3, 3\)"):
            ops.conv2d(x, w, padding=1)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            ops.conv2d(t(uniform(rng, 1, 1, 4, 4)), t(uniform(rng, 1, 1, 2, 2)))

    def test_linearity(self, rng):
        x = t(uniform(rng, 1, 2, 6, 6))
        w = t(uniform(rng, 3, 2, 3, 3))
        scaled = ops.conv2d(x * 2.5, w, padding=1).data
        assert np.allclose(scaled, 2.5 * ops.conv2d(x, w, padding=1).data, atol=1e-6)

    def test_depthwise_matches_dense_block_diagonal(self, rng):
        x = t(uniform(rng, 2, 3, 6, 6))
        dw = uniform(rng, 3, 1, 3, 3).astype(np.float32)
        dense = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            dense[c, c] = dw[c, 0]
        a = ops.conv2d(x, t(dw), padding=1, groups=3).data
        b = ops.conv2d(x, t(dense), padding=1).data
        assert np.allclose(a, b, atol=1e-6)

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
    def test_gradcheck_dense(self, rng, stride, padding):
        inputs = [uniform(rng, 1, 2, 6, 6), uniform(rng, 3, 2, 3, 3), uniform(rng, 3)]
        result = gradcheck(lambda x, w, b: ops.conv2d(x, w, b, stride=stride, padding=padding), inputs)
        assert result.passed, result.per_input

    def test_gradcheck_depthwise_strided(self, rng):
        inputs = [uniform(rng, 2, 3, 7, 7), uniform(rng, 3, 1, 5, 5), uniform(rng, 3)]
        result = gradcheck(lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=2, groups=3), inputs)
        assert result.passed, result.per_input


class TestDepthwiseSeparable:
    def test_identity_filters(self, rng):
        x = t(uniform(rng, 1, 2, 4, 4))
        dw = np.zeros((2, 1, 3, 3), dtype=np.float32)
        dw[:, 0, 1, 1] = 1.0
        pw = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
        assert np.array_equal(ops.depthwise_separable_conv(x, t(dw), t(pw)).data, x.data)

    def test_pointwise_channel_sum(self):
        x = t(np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2))
        dw = np.zeros((2, 1, 3, 3), dtype=np.float32)
        dw[:, 0, 1, 1] = 1.0
        pw = np.ones((1, 2, 1, 1), dtype=np.float32)
        out = ops.depthwise_separable_conv(x, t(dw), t(pw)).data
        assert np.array_equal(out[0, 0], x.data[0, 0] + x.data[0, 1])

    def test_parameter_count(self, rng):
        assert DepthwiseSeparableConv2d(8, 8, 3, rng).num_parameters() == 136

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="depthwise"):
            ops.depthwise_separable_conv(
                t(uniform(rng, 1, 3, 4, 4)), t(uniform(rng, 2, 1, 3, 3)), t(uniform(rng, 2, 2, 1, 1))
            )

    def test_gradcheck(self, rng):
        inputs = [uniform(rng, 1, 4, 6, 6), uniform(rng, 4, 1, 3, 3), uniform(rng, 3, 4, 1, 1)]
        assert gradcheck(ops.depthwise_separable_conv, inputs).passed


class TestNormalize:
    def affine(self, channels, scale=1.0, bias=0.0):
        return t(np.full(channels, scale)), t(np.full(channels, bias))

    @pytest.mark.parametrize("mode", ["layer", "batch"])
    def test_constant_input_gives_zeros(self, mode):
        out = ops.normalize(t(np.full((2, 3, 4, 4), 7.0)), mode, *self.affine(3))
        assert np.allclose(out.data, 0.0)

    def test_two_values_over_channels(self):
        x = t(np.array([1.0, 3.0]).reshape(1, 2, 1, 1))
        out = ops.normalize(x, "layer", *self.affine(2), eps=1e-12)
        assert np.allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-5)

    def test_zero_scale_returns_bias(self, rng):
        out = ops.normalize(t(uniform(rng, 2, 3, 4, 4)), "batch", *self.affine(3, scale=0.0, bias=0.25))
        assert np.allclose(out.data, 0.25)

    @pytest.mark.parametrize("mode,axes", [("layer", (1,)), ("batch", (0, 2, 3))])
    def test_normalized_moments(self, rng, mode, axes):
        out = ops.normalize(t(uniform(rng, 4, 6, 8, 8) * 3 + 1), mode, *self.affine(6)).data
        assert np.abs(out.mean(axis=axes)).max() < 1e-5
        assert np.abs(out.var(axis=axes) - 1.0).max() < 1e-3

    def test_non_positive_eps_rejected(self, rng):
        with pytest.raises(ValueError, match="eps"):
            ops.normalize(t(uniform(rng, 1, 2, 2, 2)), "layer", *self.affine(2), eps=0.0)

    @pytest.mark.parametrize("mode", ["layer", "batch"])
    def test_gradcheck(self, rng, mode):
        inputs = [uniform(rng, 2, 3, 4, 4), uniform(rng, 3), uniform(rng, 3)]
        assert gradcheck(lambda x, s, b: ops.normalize(x, mode, s, b), inputs).passed

    def test_gradcheck_fixed_statistics(self, rng):
        running = (uniform(rng, 3), rng.uniform(0.5, 2.0, 3))
        inputs = [uniform(rng, 2, 3, 4, 4), uniform(rng, 3), uniform(rng, 3)]
        assert gradcheck(lambda x, s, b: ops.normalize(x, "batch", s, b, running=running), inputs).passed


class TestActivations:
    def test_relu(self):
        assert ops.activation(t([-1.0, 0.0, 2.0]), "relu").data.tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_at_zero(self):
        assert ops.activation(t([0.0]), "sigmoid").item() == pytest.approx(0.5)

    def test_softmax_symmetric(self):
        assert np.allclose(ops.activation(t([[3.0, 3.0]]), "softmax", axis=1).data, [[0.5, 0.5]])

    def test_softmax_needs_axis(self):
        with pytest.raises(ValueError, match="axis"):
            ops.activation(t([1.0, 2.0]), "softmax")

    def test_softmax_sums_to_one(self, rng):
        out = ops.softmax(t(uniform(rng, 2, 5, 3, 3) * 10), axis=1).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6

    @pytest.mark.parametrize("name", ["relu", "sigmoid"])
    def test_gradcheck_elementwise(self, rng, name):
        assert gradcheck(lambda x: ops.activation(x, name), [uniform(rng, 2, 3, 4)]).passed

    def test_gradcheck_softmax_and_log_softmax(self, rng):
        x = [uniform(rng, 2, 4, 3, 3)]
        assert gradcheck(lambda v: ops.softmax(v, axis=1), x).passed
        assert gradcheck(lambda v: ops.log_softmax(v, axis=1), x).passed


class TestPool:
    def test_constant_input(self):
        x = t(np.full((2, 3, 4, 4), 1.5))
        assert np.allclose(ops.pool(x, "global_avg").data, 1.5)
        assert np.allclose(ops.pool(x, "channel_avg").data, 1.5)
        assert np.allclose(ops.pool(x, "channel_max").data, 1.5)

    def test_channel_reductions(self):
        x = t(np.array([1.0, 5.0]).reshape(1, 2, 1, 1))
        assert ops.pool(x, "channel_max").item() == 5.0
        assert ops.pool(x, "channel_avg").item() == 3.0

    def test_shapes(self, rng):
        x = t(uniform(rng, 2, 3, 4, 5))
        assert ops.pool(x, "global_avg").shape == (2, 3)
        assert ops.pool(x, "channel_max").shape == (2, 1, 4, 5)

    def test_rank_checked(self, rng):
        with pytest.raises(ValueError, match="rank-4"):
            ops.pool(t(uniform(rng, 3, 4)), "global_avg")

    def test_gradcheck(self, rng):
        x = [uniform(rng, 2, 3, 4, 4)]
        for kind in ("global_avg", "channel_avg", "channel_max"):
            assert gradcheck(lambda v: ops.pool(v, kind), x).passed, kind


class TestBilinearSample:
    def grid(self, B, H, W):
        ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        return np.broadcast_to(np.stack([ys, xs])[None], (B, 2, H, W)).astype(np.float32)

    def test_identity_coordinates(self, rng):
        x = t(uniform(rng, 2, 3, 4, 5))
        assert np.array_equal(ops.bilinear_sample(x, t(self.grid(2, 4, 5))).data, x.data)

    def test_midpoint(self):
        x = t(np.array([[2.0, 4.0]]).reshape(1, 1, 1, 2))
        coords = self.grid(1, 1, 2)
        coords[0, 1, 0, 0] = 0.5
        assert ops.bilinear_sample(x, t(coords)).data[0, 0, 0, 0] == pytest.approx(3.0)

    def test_out_of_bounds_reads_zero(self, rng):
        x = t(uniform(rng, 1, 2, 3, 3) + 5.0)
        coords = np.full((1, 2, 3, 3), -5.0, dtype=np.float32)
        assert np.array_equal(ops.bilinear_sample(x, t(coords)).data, np.zeros((1, 2, 3, 3)))

    def test_coords_shape_checked(self, rng):
        with pytest.raises(ValueError, match="coords"):
            ops.bilinear_sample(t(uniform(rng, 1, 1, 3, 3)), t(np.zeros((1, 2, 2, 2))))

    def test_gradcheck_input_and_coords(self, rng):
        x = uniform(rng, 1, 2, 5, 5)
        coords = self.grid(1, 5, 5) + rng.uniform(-1.3, 1.3, size=(1, 2, 5, 5))
        # keep clear of integer positions where the interpolant has kinks
        coords = np.where(np.abs(coords - np.round(coords)) < 0.05, coords + 0.1, coords)
        assert gradcheck(ops.bilinear_sample, [x, coords]).passed


class TestShapePlumbing:
    def test_concat_channel_count_and_order(self, rng):
        a, b = t(uniform(rng, 1, 2, 3, 3)), t(uniform(rng, 1, 3, 3, 3))
        out = ops.concat_channels(a, b)
        assert out.shape == (1, 5, 3, 3)
        assert np.array_equal(out.data[:, :2], a.data)

    def test_concat_with_empty(self, rng):
        x = t(uniform(rng, 1, 2, 3, 3))
        empty = t(np.zeros((1, 0, 3, 3)))
        assert np.array_equal(ops.concat_channels(x, empty).data, x.data)

    def test_concat_spatial_mismatch(self, rng):
        with pytest.raises(ValueError, match="concatenate"):
            ops.concat_channels(t(uniform(rng, 1, 2, 3, 3)), t(uniform(rng, 1, 2, 4, 3)))

    def test_gradchecks(self, rng):
        assert gradcheck(ops.concat_channels, [uniform(rng, 1, 2, 3, 3), uniform(rng, 1, 1, 3, 3)]).passed
        assert gradcheck(ops.upsample_nearest2x, [uniform(rng, 1, 2, 3, 3)]).passed
        assert gradcheck(lambda v: ops.flip(v, (2, 3)), [uniform(rng, 1, 2, 3, 4)]).passed
        assert gradcheck(lambda v: v.transpose(0, 2, 1).reshape(2, -1)[:, 1:4], [uniform(rng, 2, 3, 2)]).passed


class TestBackward:
    def test_square(self):
        x = t([3.0], grad=True)
        backward((x * x).sum())
        assert x.grad.tolist() == [6.0]

    def test_relu_sum(self):
        x = t([-1.0, 2.0], grad=True)
        backward(ops.relu(x).sum())
        assert x.grad.tolist() == [0.0, 1.0]

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0], grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_shared_subexpression_accumulates(self):
        x = t([2.0], grad=True)
        y = x * 3.0
        backward((y * y + y).sum())
        assert x.grad.tolist() == pytest.approx([39.0])

    def test_no_grad_records_nothing(self):
        x = t([1.0], grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._ctx is None

    def test_dtype_preserved(self):
        assert (Tensor(np.ones(2)) * 2.0).dtype == np.float64
        assert (Tensor([1, 2]) * 2.0).dtype == np.float32

    def test_scalar_reductions_keep_float64(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        assert x.mean().dtype == np.float64
        assert x.sum().dtype == np.float64
        assert (x.sum() * x.mean()).dtype == np.float64
        assert x.sum(axis=(0, 1)).dtype == np.float64


class TestModule:
    class Pair(Module):
        def __init__(self, rng):
            super().__init__()
            self.first = Conv2d(2, 3, 3, rng)
            self.norm = Norm2d(3, "batch")
            self.scale = Parameter(np.ones(1, dtype=np.float32))

        def forward(self, x):
            return self.norm(self.first(x)) * self.scale

    def test_parameter_names_in_registration_order(self, rng):
        names = [name for name, _ in self.Pair(rng).named_parameters()]
        assert names == ["scale", "first.weight", "first.bias", "norm.scale", "norm.bias"]

    def test_conv_parameter_count(self, rng):
        assert Conv2d(4, 8, 1, rng).num_parameters() == 40

    def test_state_dict_round_trip(self, rng):
        a, b = self.Pair(rng), self.Pair(rng)
        b.load_state_dict(a.state_dict())
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.data, pb.data)
        assert "norm.running_mean" in a.state_dict()

    def test_load_rejects_missing_keys(self, rng):
        state = self.Pair(rng).state_dict()
        state.pop("first.bias")
        with pytest.raises(ValueError, match="first.bias"):
            self.Pair(rng).load_state_dict(state)

    def test_batch_norm_running_stats_used_in_eval(self, rng):
        module = self.Pair(rng)
        x = t(uniform(rng, 4, 2, 5, 5) * 4 + 2)
        module(x)
        assert not np.allclose(module.norm.running_mean, 0.0)
        module.eval()
        first, second = module(x).data, module(x).data
        assert np.array_equal(first, second)

    def test_astype(self, rng):
        module = self.Pair(rng).astype(np.float64)
        assert all(p.dtype == np.float64 for p in module.parameters())
        assert module.norm.running_var.dtype == np.float64


def test_gradcheck_uses_millistep_central_differences():
    for fn in (gradcheck, gradcheck_module):
        assert inspect.signature(fn).parameters["eps"].default == 1e-3
