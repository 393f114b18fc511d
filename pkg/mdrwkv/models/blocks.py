"""Encoder building blocks: deformable shift, MD-RWKV block, selective-kernel
attention and cross-stage dual-attention fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mdrwkv.core import ops
from mdrwkv.core.nn import Conv2d, DepthwiseSeparableConv2d, Module, ModuleList, Norm2d, Parameter
from mdrwkv.core.tensor import Tensor
from mdrwkv.core.wkv import WkvParams, flatten_raster, unflatten_raster, wkv
from mdrwkv.models.schemas import MdRwkvBlockConfig, SkConfig


def drop_path(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Stochastic depth: drop whole samples of a residual branch, rescale the rest."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"drop path rate must lie in [0, 1], got {rate}")
    if not training or rate == 0.0:
        return x
    if rate >= 1.0:
        return x * 0.0
    keep = 1.0 - rate
    mask = (rng.random(x.shape[0]) < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)
    return x * Tensor(mask.reshape((-1,) + (1,) * (x.ndim - 1)))


# ════════════════════════════════════════════
#  DeformableShift
# ════════════════════════════════════════════


def pixel_grid(batch: int, height: int, width: int, dtype) -> Tensor:
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    grid = np.stack([ys, xs])[None].astype(dtype)
    return Tensor(np.broadcast_to(grid, (batch, 2, height, width)).copy())


def deformable_shift(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Resample ``x`` at each pixel plus a predicted (dy, dx) offset."""
    offsets = ops.conv2d(x, weight, bias, padding=weight.shape[2] // 2)
    B, _, H, W = x.shape
    coords = pixel_grid(B, H, W, x.dtype) + offsets
    return ops.bilinear_sample(x, coords)


class DeformableShift(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.offset = Conv2d(channels, 2, 3, rng)
        # zero offsets make the shift an exact identity at init
        self.offset.weight.data[...] = 0.0
        self.offset.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return deformable_shift(x, self.offset.weight, self.offset.bias)


# ════════════════════════════════════════════
#  MD-RWKV block
# ════════════════════════════════════════════


class MdRwkvBlock(Module):
    """Normalize and project, then a local depthwise-separable path and a
    dynamic WKV path, concatenated, projected back and added residually.

    Dynamic path order: shift -> k, v, r gates -> WKV -> sigmoid(r) gate ->
    norm -> 1x1 linear.
    """

    def __init__(
        self,
        config: MdRwkvBlockConfig,
        rng: np.random.Generator,
        drop_rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.config = config
        self.drop_rng = drop_rng if drop_rng is not None else np.random.default_rng(0)
        c_in, c_mid = config.c_in, config.c_mid

        self.norm = Norm2d(c_in, config.norm_mode)
        self.proj_in = Conv2d(c_in, c_mid, 1, rng)
        self.local = DepthwiseSeparableConv2d(c_mid, c_mid, config.dw_kernel, rng)
        self.shift = DeformableShift(c_mid, rng) if config.use_deformable_shift else None
        self.key = Conv2d(c_mid, c_mid, 1, rng)
        self.value = Conv2d(c_mid, c_mid, 1, rng)
        self.receptance = Conv2d(c_mid, c_mid, 1, rng)
        init = WkvParams.init(c_mid, rng)
        self.w_raw = Parameter(init.w_raw.astype(np.float32))
        self.u = Parameter(init.u.astype(np.float32))
        self.out_norm = Norm2d(c_mid, config.norm_mode)
        self.out_linear = Conv2d(c_mid, c_mid, 1, rng)
        self.proj_out = Conv2d(2 * c_mid, c_in, 1, rng)

    def dynamic_path(self, x: Tensor) -> Tensor:
        _, _, H, W = x.shape
        shifted = self.shift(x) if self.shift is not None else x
        k = flatten_raster(self.key(shifted))
        v = flatten_raster(self.value(shifted))
        y = unflatten_raster(wkv(k, v, self.w_raw, self.u), H, W)
        gated = ops.sigmoid(self.receptance(shifted)) * y
        return self.out_linear(self.out_norm(gated))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.c_in:
            raise ValueError(f"MD-RWKV block expects {self.config.c_in} input channels, got shape {x.shape}")
        projected = self.proj_in(self.norm(x))
        mixed = ops.concat_channels(self.local(projected), self.dynamic_path(projected))
        branch = self.proj_out(mixed)
        return x + drop_path(branch, self.config.drop_path_rate, self.training, self.drop_rng)


# ════════════════════════════════════════════
#  Selective-kernel attention
# ════════════════════════════════════════════


class SkAttention(Module):
    """Depthwise branches of different kernel sizes blended per channel by
    softmax weights computed from their pooled sum."""

    def __init__(self, channels: int, config: SkConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        hidden = config.hidden_channels(channels)
        self.branches = ModuleList(
            Conv2d(channels, channels, k, rng, groups=channels) for k in config.kernel_sizes
        )
        self.squeeze = Conv2d(channels, hidden, 1, rng)
        self.selects = ModuleList(Conv2d(hidden, channels, 1, rng) for _ in config.kernel_sizes)
        for select in self.selects:
            select.bias.data[...] = 0.0

    def _weights(self, branch_sum: Tensor) -> Tensor:
        B, C = branch_sum.shape[:2]
        pooled = ops.pool(branch_sum, "global_avg").reshape(B, C, 1, 1)
        z = ops.relu(self.squeeze(pooled))
        logits = ops.concat([select(z).reshape(B, 1, C) for select in self.selects], axis=1)
        return ops.softmax(logits, axis=1)

    def selection_weights(self, x: Tensor) -> Tensor:
        """(B, branches, C) softmax weights; each (b, c) column sums to 1."""
        outs = [branch(x) for branch in self.branches]
        return self._weights(_sum(outs))

    def forward(self, x: Tensor) -> Tensor:
        outs = [branch(x) for branch in self.branches]
        weights = self._weights(_sum(outs))
        B, C = x.shape[:2]
        return _sum([weights[:, i].reshape(B, C, 1, 1) * out for i, out in enumerate(outs)])


def _sum(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total


def sk_attention(x: Tensor, block: SkAttention) -> Tensor:
    return block(x)


# ════════════════════════════════════════════
#  Cross-stage fusion
# ════════════════════════════════════════════


@dataclass
class FusionPair:
    """Low- and high-level features, already spatially aligned."""

    f_low: Tensor
    f_high: Tensor

    def __post_init__(self):
        lo, hi = self.f_low.shape, self.f_high.shape
        if len(lo) != 4 or len(hi) != 4 or lo[0] != hi[0] or lo[2:] != hi[2:]:
            raise ValueError(f"fusion inputs must share batch and spatial size, got {lo} and {hi}")


class CrossStageFusion(Module):
    """Channel weights (alpha_l, alpha_h) from a two-layer 1x1 MLP and a
    7x7 spatial mask s over channel avg/max, blended as
    (alpha_l * s) * F_l + (alpha_h * (1 - s)) * proj(F_h).

    alpha_l and alpha_h are left unbounded.
    """

    def __init__(self, c_low: int, c_high: int, rng: np.random.Generator):
        super().__init__()
        c_cat = c_low + c_high
        self.proj = Conv2d(c_high, c_low, 1, rng)
        self.phi1 = Conv2d(c_cat, max(c_cat // 2, 1), 1, rng)
        self.phi2 = Conv2d(max(c_cat // 2, 1), 2, 1, rng)
        self.spatial = Conv2d(2, 1, 7, rng)

    def attention_maps(self, f_low: Tensor, f_high: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        cat = ops.concat_channels(f_low, f_high)
        alpha = self.phi2(ops.relu(self.phi1(cat)))
        pooled = ops.concat_channels(ops.pool(cat, "channel_avg"), ops.pool(cat, "channel_max"))
        s = ops.sigmoid(self.spatial(pooled))
        return alpha[:, 0:1], alpha[:, 1:2], s

    @staticmethod
    def fuse(f_low: Tensor, f_high: Tensor, alpha_l: Tensor, alpha_h: Tensor, s: Tensor) -> Tensor:
        return (alpha_l * s) * f_low + (alpha_h * (1.0 - s)) * f_high

    def forward(self, f_low: Tensor, f_high: Tensor) -> Tensor:
        FusionPair(f_low, f_high)
        alpha_l, alpha_h, s = self.attention_maps(f_low, f_high)
        return self.fuse(f_low, self.proj(f_high), alpha_l, alpha_h, s)


def cross_stage_fusion(pair: FusionPair, fusion: CrossStageFusion) -> Tensor:
    return fusion(pair.f_low, pair.f_high)
