import math

import numpy as np
import pytest

from mdrwkv.core.gradcheck import gradcheck
from mdrwkv.core.tensor import Tensor
from mdrwkv.core.wkv import (
    W_INIT_RANGE,
    WkvParams,
    WkvSequence,
    flatten_raster,
    inverse_softplus,
    softplus,
    unflatten_raster,
    wkv,
    wkv_backward,
    wkv_forward_naive,
    wkv_forward_scan,
)


def sequence(k, v):
    return WkvSequence(np.asarray(k, dtype=np.float64).reshape(1, -1, 1), np.asarray(v, dtype=np.float64).reshape(1, -1, 1))


def params(w, u):
    return WkvParams.from_decay([w], [u])


def random_case(rng, B, T, C):
    seq = WkvSequence(rng.uniform(-2, 2, (B, T, C)), rng.uniform(-2, 2, (B, T, C)))
    prm = WkvParams.from_decay(rng.uniform(0, 3, C), rng.uniform(-2, 2, C))
    return seq, prm


BOTH = pytest.mark.parametrize("forward", [wkv_forward_naive, wkv_forward_scan], ids=["naive", "scan"])


class TestForward:
    @BOTH
    def test_single_step(self, forward):
        for w in (0.0, 1.0, 7.0):
            assert forward(sequence([2.0], [3.0]), params(w, 0.5)).reshape(-1).tolist() == pytest.approx([7.5])

    @BOTH
    def test_zero_decay_is_prefix_sum(self, forward):
        out = forward(sequence([1, 1], [1, 2]), params(0.0, 0.0))
        assert out.reshape(-1).tolist() == pytest.approx([1.0, 3.0])

    @BOTH
    def test_halving_decay(self, forward):
        out = forward(sequence([1, 1, 1], [4, 4, 4]), params(math.log(2), 0.0))
        assert out.reshape(-1).tolist() == pytest.approx([4.0, 6.0, 7.0])

    @BOTH
    def test_zero_values(self, forward, rng):
        seq = WkvSequence(rng.uniform(-2, 2, (2, 9, 3)), np.zeros((2, 9, 3)))
        assert np.array_equal(forward(seq, WkvParams.init(3, rng)), np.zeros((2, 9, 3)))

    def test_scan_matches_naive_on_random_instances(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            seq, prm = random_case(rng, int(rng.integers(1, 3)), int(rng.integers(1, 65)), int(rng.integers(1, 9)))
            worst = max(worst, np.abs(wkv_forward_scan(seq, prm) - wkv_forward_naive(seq, prm)).max())
        assert worst < 1e-5

    def test_large_decay_is_memoryless(self, rng):
        seq = WkvSequence(rng.uniform(-2, 2, (1, 20, 4)), rng.uniform(-2, 2, (1, 20, 4)))
        prm = WkvParams.from_decay(np.full(4, 50.0), rng.uniform(-1, 1, 4))
        expected = (prm.u + seq.k) * seq.v
        assert np.abs(wkv_forward_scan(seq, prm) - expected).max() < 1e-6

    @BOTH
    def test_linear_in_values(self, forward, rng):
        seq, prm = random_case(rng, 2, 16, 3)
        scaled = WkvSequence(seq.k, -1.75 * seq.v)
        assert np.abs(forward(scaled, prm) + 1.75 * forward(seq, prm)).max() < 1e-6

    def test_causal(self, rng):
        seq, prm = random_case(rng, 1, 12, 2)
        base = wkv_forward_scan(seq, prm)
        k, v = seq.k.copy(), seq.v.copy()
        k[:, 7] += 3.0
        v[:, 7] -= 1.0
        moved = wkv_forward_scan(WkvSequence(k, v), prm)
        assert np.array_equal(moved[:, :7], base[:, :7])
        assert not np.allclose(moved[:, 7:], base[:, 7:])

    def test_non_negative_inputs_give_non_negative_outputs(self, rng):
        seq = WkvSequence(rng.uniform(0, 2, (2, 30, 4)), rng.uniform(0, 2, (2, 30, 4)))
        prm = WkvParams.from_decay(rng.uniform(0, 3, 4), rng.uniform(0, 2, 4))
        assert wkv_forward_scan(seq, prm).min() >= 0.0

    def test_output_dtype_follows_keys(self, rng):
        seq = WkvSequence(rng.uniform(-1, 1, (1, 5, 2)).astype(np.float32), rng.uniform(-1, 1, (1, 5, 2)).astype(np.float32))
        assert wkv_forward_scan(seq, WkvParams.init(2, rng)).dtype == np.float32

    def test_channel_mismatch(self, rng):
        seq, _ = random_case(rng, 1, 4, 3)
        with pytest.raises(ValueError, match="channels"):
            wkv_forward_scan(seq, WkvParams.init(2, rng))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError, match="T >= 1"):
            WkvSequence(np.zeros((1, 0, 2)), np.zeros((1, 0, 2)))


class TestParams:
    def test_softplus_round_trip(self):
        w = np.array([0.3, 1.0, 3.0])
        assert np.allclose(softplus(inverse_softplus(w)), w)

    def test_init_spans_decay_range(self, rng):
        w = WkvParams.init(64, rng).w
        assert w.min() >= W_INIT_RANGE[0] - 1e-9
        assert w.max() <= W_INIT_RANGE[1] + 1e-9
        assert np.array_equal(WkvParams.init(4, rng).u, np.zeros(4))

    def test_negative_decay_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            WkvParams.from_decay([-0.1], [0.0])


class TestBackward:
    def test_zero_upstream_gradient(self, rng):
        seq, prm = random_case(rng, 2, 8, 3)
        grads = wkv_backward(seq, prm, np.zeros((2, 8, 3)))
        for g in (grads.k, grads.v, grads.w_raw, grads.u):
            assert not np.any(g)

    def test_single_step_value_gradient(self):
        grads = wkv_backward(sequence([2.0], [3.0]), params(1.0, 0.5), np.ones((1, 1, 1)))
        assert grads.v.reshape(-1).tolist() == pytest.approx([2.5])
        assert grads.k.reshape(-1).tolist() == pytest.approx([3.0])

    def test_gradcheck_all_inputs(self, rng):
        k, v = rng.uniform(-2, 2, (1, 6, 3)), rng.uniform(-2, 2, (1, 6, 3))
        w_raw, u = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        result = gradcheck(wkv, [k, v, w_raw, u])
        assert result.passed, result.per_input

    def test_gradcheck_batched(self, rng):
        inputs = [rng.uniform(-1, 1, (2, 10, 2)), rng.uniform(-1, 1, (2, 10, 2)), rng.uniform(-1, 2, 2), rng.uniform(0, 1, 2)]
        assert gradcheck(wkv, inputs).passed


class TestRaster:
    def test_row_major_order(self):
        image = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert flatten_raster(image).data.reshape(-1).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_round_trip(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4, 5)))
        seq = flatten_raster(x)
        assert seq.shape == (2, 20, 3)
        assert np.array_equal(unflatten_raster(seq, 4, 5).data, x.data)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="2x2"):
            unflatten_raster(Tensor(np.zeros((1, 3, 1))), 2, 2)
