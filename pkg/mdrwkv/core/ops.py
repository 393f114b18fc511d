"""Differentiable primitives used by the segmentation blocks.

All image tensors are laid out (B, C, H, W), row-major.
"""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy import special

from mdrwkv.core.tensor import Function, Tensor

NormMode = Literal["layer", "batch"]


def output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _window(xp: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int) -> np.ndarray:
    return xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]


# ── Convolution ──────────────────────────────


class Conv2dFn(Function):
    """Cross-correlation via im2col for dense kernels, per-tap sums for depthwise."""

    def forward(self, x, weight, bias=None, *, stride=1, padding=0, depthwise=False):
        B, C, H, W = x.shape
        kh, kw = weight.shape[2:]
        ho, wo = output_size(H, kh, stride, padding), output_size(W, kw, stride, padding)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.meta = (x.shape, xp.shape, stride, padding, ho, wo, bias is not None)
        self.weight, self.depthwise = weight, depthwise

        if depthwise:
            out = np.zeros((B, C, ho, wo), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    out += weight[:, 0, i, j][None, :, None, None] * _window(xp, i, j, stride, ho, wo)
            self.xp = xp
        else:
            sb, sc, sh, sw = xp.strides
            patches = as_strided(
                xp,
                shape=(B, C, kh, kw, ho, wo),
                strides=(sb, sc, sh, sw, stride * sh, stride * sw),
                writeable=False,
            )
            self.cols = patches.reshape(B, C * kh * kw, ho * wo)
            out = np.matmul(weight.reshape(weight.shape[0], -1), self.cols)
            out = out.reshape(B, weight.shape[0], ho, wo)
        if bias is not None:
            out = out + bias[None, :, None, None]
        return out

    def backward(self, grad):
        x_shape, xp_shape, stride, padding, ho, wo, has_bias = self.meta
        weight = self.weight
        kh, kw = weight.shape[2:]
        grad_xp = np.zeros(xp_shape, dtype=grad.dtype)

        if self.depthwise:
            grad_w = np.zeros_like(weight)
            for i in range(kh):
                for j in range(kw):
                    grad_w[:, 0, i, j] = (grad * _window(self.xp, i, j, stride, ho, wo)).sum(axis=(0, 2, 3))
                    _window(grad_xp, i, j, stride, ho, wo)[...] += weight[:, 0, i, j][None, :, None, None] * grad
        else:
            B, c_out = grad.shape[:2]
            grad_m = grad.reshape(B, c_out, ho * wo)
            w_mat = weight.reshape(c_out, -1)
            grad_w = np.tensordot(grad_m, self.cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
            grad_cols = np.matmul(w_mat.T, grad_m).reshape(B, x_shape[1], kh, kw, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    _window(grad_xp, i, j, stride, ho, wo)[...] += grad_cols[:, :, i, j]

        H, W = x_shape[2:]
        grad_x = grad_xp[:, :, padding : padding + H, padding : padding + W] if padding else grad_xp
        grads = [grad_x, grad_w]
        if has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Standard 2-D cross-correlation. ``groups`` is 1 (dense) or C (depthwise)."""
    if input.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects rank-4 input and weight, got {input.shape} and {weight.shape}")
    c_out, c_in_per_group, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride} and {padding}")
    c_in = input.shape[1]
    if groups == 1:
        depthwise = False
        if c_in_per_group != c_in:
            raise ValueError(f"conv2d input shape {input.shape} does not match weight shape {weight.shape}")
    elif groups == c_in and c_out == c_in and c_in_per_group == 1:
        depthwise = True
    else:
        raise ValueError(
            f"conv2d supports groups=1 or depthwise groups={c_in}; "
            f"input shape {input.shape}, weight shape {weight.shape}, groups={groups}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weight shape {weight.shape}")
    H, W = input.shape[2:]
    if output_size(H, kh, stride, padding) < 1 or output_size(W, kw, stride, padding) < 1:
        raise ValueError(f"conv2d kernel {kh}x{kw} does not fit input shape {input.shape} with padding {padding}")
    args = (input, weight) if bias is None else (input, weight, bias)
    return Conv2dFn.apply(*args, stride=stride, padding=padding, depthwise=depthwise)


def depthwise_separable_conv(
    input: Tensor,
    dw_weight: Tensor,
    pw_weight: Tensor,
    dw_bias: Optional[Tensor] = None,
    pw_bias: Optional[Tensor] = None,
) -> Tensor:
    """Per-channel k x k convolution followed by 1 x 1 channel mixing."""
    channels = input.shape[1]
    if dw_weight.shape[:2] != (channels, 1):
        raise ValueError(
            f"depthwise weight {dw_weight.shape} needs one filter per input channel ({channels})"
        )
    if pw_weight.shape[1:] != (channels, 1, 1):
        raise ValueError(f"pointwise weight {pw_weight.shape} does not mix {channels} channels")
    spatial = conv2d(input, dw_weight, dw_bias, padding=dw_weight.shape[2] // 2, groups=channels)
    return conv2d(spatial, pw_weight, pw_bias)


# ── Normalization ──────────────────────────────


class NormalizeFn(Function):
    def forward(self, x, scale, bias, *, axes, eps, mean=None, var=None):
        self.axes = axes
        self.batch_stats = mean is None
        if self.batch_stats:
            mean = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
        else:
            mean = np.asarray(mean, dtype=x.dtype).reshape(1, -1, 1, 1)
            var = np.asarray(var, dtype=x.dtype).reshape(1, -1, 1, 1)
        self.invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        self.xhat = (x - mean) * self.invstd
        self.scale = scale.reshape(1, -1, 1, 1)
        return self.xhat * self.scale + bias.reshape(1, -1, 1, 1)

    def backward(self, grad):
        grad_scale = (grad * self.xhat).sum(axis=(0, 2, 3))
        grad_bias = grad.sum(axis=(0, 2, 3))
        gx = grad * self.scale
        if self.batch_stats:
            grad_x = self.invstd * (
                gx
                - gx.mean(axis=self.axes, keepdims=True)
                - self.xhat * (gx * self.xhat).mean(axis=self.axes, keepdims=True)
            )
        else:
            grad_x = gx * self.invstd
        return grad_x, grad_scale, grad_bias


NORM_AXES = {"layer": (1,), "batch": (0, 2, 3)}


def normalize(
    input: Tensor,
    mode: NormMode,
    affine_scale: Tensor,
    affine_bias: Tensor,
    eps: float = 1e-5,
    running: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Tensor:
    """Layer mode normalizes over C per pixel; batch mode over (B, H, W) per channel.

    ``running`` replaces the batch statistics with fixed (mean, var) per
    channel, as used by batch mode at evaluation time.
    """
    if mode not in NORM_AXES:
        raise ValueError(f"unknown norm mode '{mode}'")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    kwargs = {"axes": NORM_AXES[mode], "eps": eps}
    if running is not None:
        kwargs["mean"], kwargs["var"] = running
    return NormalizeFn.apply(input, affine_scale, affine_bias, **kwargs)


# ── Activations ──────────────────────────────


class ReluFn(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class SigmoidFn(Function):
    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class SoftmaxFn(Function):
    def forward(self, x, axis):
        self.axis = axis
        self.out = special.softmax(x, axis=axis).astype(x.dtype)
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


class LogSoftmaxFn(Function):
    def forward(self, x, axis):
        self.axis = axis
        out = special.log_softmax(x, axis=axis).astype(x.dtype)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * grad.sum(axis=self.axis, keepdims=True),)


def relu(x: Tensor) -> Tensor:
    return ReluFn.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return SigmoidFn.apply(x)


def softmax(x: Tensor, axis: int) -> Tensor:
    return SoftmaxFn.apply(x, axis=axis)


def log_softmax(x: Tensor, axis: int) -> Tensor:
    return LogSoftmaxFn.apply(x, axis=axis)


def activation(input: Tensor, kind: str, axis: Optional[int] = None) -> Tensor:
    if kind == "relu":
        return relu(input)
    if kind == "sigmoid":
        return sigmoid(input)
    if kind == "softmax":
        if axis is None:
            raise ValueError("softmax activation requires an axis")
        return softmax(input, axis)
    raise ValueError(f"unknown activation '{kind}'")


# ── Pooling ──────────────────────────────


class ChannelMaxFn(Function):
    def forward(self, x):
        self.shape, self.dtype = x.shape, x.dtype
        self.winner = x.argmax(axis=1)[:, None]
        return np.take_along_axis(x, self.winner, axis=1)

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        np.put_along_axis(full, self.winner, grad, axis=1)
        return (full,)


def pool(input: Tensor, kind: str) -> Tensor:
    """global_avg -> (B, C); channel_avg / channel_max -> (B, 1, H, W)."""
    if input.ndim != 4:
        raise ValueError(f"pool expects a rank-4 tensor, got shape {input.shape}")
    if kind == "global_avg":
        return input.mean(axis=(2, 3))
    if kind == "channel_avg":
        return input.mean(axis=1, keepdims=True)
    if kind == "channel_max":
        return ChannelMaxFn.apply(input)
    raise ValueError(f"unknown pooling '{kind}'")


# ── Resampling ──────────────────────────────


class BilinearSampleFn(Function):
    """Bilinear gather at absolute (y, x) positions; outside the image reads 0."""

    def forward(self, x, coords):
        B, C, H, W = x.shape
        n = H * W
        y = coords[:, 0].reshape(B, n)
        xc = coords[:, 1].reshape(B, n)
        y0, x0 = np.floor(y), np.floor(xc)
        fy, fx = y - y0, xc - x0
        flat = x.reshape(B, C, n)

        self.corners = []
        out = np.zeros((B, C, n), dtype=x.dtype)
        for dy in (0, 1):
            for dx in (0, 1):
                yi = (y0 + dy).astype(np.int64)
                xi = (x0 + dx).astype(np.int64)
                valid = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
                index = np.where(valid, yi * W + xi, 0)
                values = np.take_along_axis(flat, index[:, None, :], axis=2) * valid[:, None, :]
                wy = fy if dy else 1 - fy
                wx = fx if dx else 1 - fx
                out += (wy * wx)[:, None, :] * values
                self.corners.append((dy, dx, index, valid, values))
        self.fy, self.fx = fy, fx
        self.shape = x.shape
        return out.reshape(B, C, H, W)

    def backward(self, grad):
        B, C, H, W = self.shape
        n = H * W
        g = grad.reshape(B, C, n)
        fy, fx = self.fy, self.fx
        grad_flat = np.zeros(B * C * n, dtype=grad.dtype)
        grad_y = np.zeros((B, n), dtype=grad.dtype)
        grad_x = np.zeros((B, n), dtype=grad.dtype)
        rows = (np.arange(B * C) * n).reshape(B, C, 1)
        for dy, dx, index, valid, values in self.corners:
            wy = fy if dy else 1 - fy
            wx = fx if dx else 1 - fx
            weight = (wy * wx * valid)[:, None, :]
            target = (rows + index[:, None, :]).reshape(-1)
            grad_flat += np.bincount(target, weights=(g * weight).reshape(-1), minlength=B * C * n).astype(grad.dtype)
            contrib = (g * values).sum(axis=1)
            grad_y += contrib * (1.0 if dy else -1.0) * wx
            grad_x += contrib * (1.0 if dx else -1.0) * wy
        grad_coords = np.stack([grad_y, grad_x], axis=1).reshape(B, 2, H, W)
        return grad_flat.reshape(self.shape), grad_coords


def bilinear_sample(input: Tensor, coords: Tensor) -> Tensor:
    """Sample ``input`` at per-pixel absolute positions ``coords`` = (y, x)."""
    B, _, H, W = input.shape
    if coords.shape != (B, 2, H, W):
        raise ValueError(f"coords shape {coords.shape} does not match input shape {input.shape}")
    return BilinearSampleFn.apply(input, coords)


class Upsample2xFn(Function):
    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        B, C, H2, W2 = grad.shape
        return (grad.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)),)


def upsample_nearest2x(x: Tensor) -> Tensor:
    return Upsample2xFn.apply(x)


class FlipFn(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.ascontiguousarray(np.flip(x, axis=axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.flip(grad, axis=self.axes)),)


def flip(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    return FlipFn.apply(x, axes=axes)


# ── Concatenation ──────────────────────────────


class ConcatFn(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return np.split(grad, self.splits, axis=self.axis)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    return ConcatFn.apply(*tensors, axis=axis)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``a`` then ``b`` along channels; batch and spatial extents must agree."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate channels of shapes {a.shape} and {b.shape}")
    return concat([a, b], axis=1)
