"""Exponential-decay key/value accumulation over a flattened pixel sequence.

    y(t, c) = sum_{tau <= t} exp(w_c (tau - t)) * (u_c + k(tau, c)) * v(tau, c)

evaluated literally (``wkv_forward_naive``, quadratic) or through the
recurrence y(t) = exp(-w) y(t-1) + (u + k(t)) v(t) (``wkv_forward_scan``).
There is no normalizing denominator and the bonus u is added at every
position. The decay is kept non-negative through w = softplus(w_raw).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from mdrwkv.core.tensor import Function, Tensor

W_INIT_RANGE = (0.3, 3.0)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.expm1(y))


@dataclass
class WkvParams:
    """Per-channel decay (through ``w_raw``) and bonus ``u``."""

    w_raw: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.w_raw = np.asarray(self.w_raw, dtype=np.float64).reshape(-1)
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        if self.w_raw.shape != self.u.shape:
            raise ValueError(f"w_raw {self.w_raw.shape} and u {self.u.shape} must cover the same channels")

    @property
    def w(self) -> np.ndarray:
        return softplus(self.w_raw)

    @property
    def channels(self) -> int:
        return self.u.shape[0]

    @classmethod
    def from_decay(cls, w, u) -> "WkvParams":
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("decay w must be non-negative")
        return cls(w_raw=inverse_softplus(w), u=u)

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "WkvParams":
        """Log-uniform decays on [0.3, 3], zero bonus."""
        low, high = np.log(W_INIT_RANGE[0]), np.log(W_INIT_RANGE[1])
        w = np.exp(rng.uniform(low, high, size=channels))
        return cls.from_decay(w, np.zeros(channels))


@dataclass
class WkvSequence:
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.k = np.asarray(self.k.data if isinstance(self.k, Tensor) else self.k)
        self.v = np.asarray(self.v.data if isinstance(self.v, Tensor) else self.v)
        if self.k.shape != self.v.shape:
            raise ValueError(f"keys {self.k.shape} and values {self.v.shape} must share a shape")
        if self.k.ndim != 3 or self.k.shape[1] < 1:
            raise ValueError(f"sequence must be (B, T, C) with T >= 1, got {self.k.shape}")

    @property
    def length(self) -> int:
        return self.k.shape[1]


def _check_channels(seq: WkvSequence, params: WkvParams) -> None:
    if seq.k.shape[2] != params.channels:
        raise ValueError(f"sequence has {seq.k.shape[2]} channels, params have {params.channels}")


def _out_dtype(seq: WkvSequence):
    return seq.k.dtype if np.issubdtype(seq.k.dtype, np.floating) else np.float32


def wkv_forward_naive(seq: WkvSequence, params: WkvParams) -> np.ndarray:
    """Quadratic reference: each output re-sums every earlier position."""
    _check_channels(seq, params)
    k = seq.k.astype(np.float64)
    v = seq.v.astype(np.float64)
    w, u = params.w, params.u
    B, T, C = k.shape
    terms = (u + k) * v
    tau = np.arange(T, dtype=np.float64)
    y = np.zeros((B, T, C))
    for t in range(T):
        weights = np.exp(w[None, :] * (tau[: t + 1, None] - t))
        y[:, t] = np.einsum("btc,tc->bc", terms[:, : t + 1], weights)
    return y.astype(_out_dtype(seq))


def _scan(terms: np.ndarray, decay: np.ndarray) -> np.ndarray:
    """First-order recurrence out(t) = decay * out(t-1) + terms(t), sequential in t per channel."""
    out = np.empty_like(terms)
    for c, d in enumerate(decay):
        out[:, :, c] = signal.lfilter([1.0], [1.0, -d], terms[:, :, c], axis=1)
    return out


def wkv_forward_scan(seq: WkvSequence, params: WkvParams) -> np.ndarray:
    """Linear-time recurrence; the running state is accumulated in float64."""
    _check_channels(seq, params)
    terms = (params.u + seq.k.astype(np.float64)) * seq.v.astype(np.float64)
    return _scan(terms, np.exp(-params.w)).astype(_out_dtype(seq))


@dataclass
class WkvGrads:
    k: np.ndarray
    v: np.ndarray
    w_raw: np.ndarray
    u: np.ndarray


def wkv_backward(seq: WkvSequence, params: WkvParams, grad_out: np.ndarray) -> WkvGrads:
    """Reverse scan G(t) = g(t) + exp(-w) G(t+1), then chain through softplus."""
    _check_channels(seq, params)
    k = seq.k.astype(np.float64)
    v = seq.v.astype(np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != k.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match sequence shape {k.shape}")
    decay = np.exp(-params.w)
    y = _scan((params.u + k) * v, decay)
    acc = _scan(g[:, ::-1], decay)[:, ::-1]

    previous = np.zeros_like(y)
    previous[:, 1:] = y[:, :-1]
    grad_decay = (acc * previous).sum(axis=(0, 1))
    grad_w = -decay * grad_decay
    dtype = _out_dtype(seq)
    return WkvGrads(
        k=(acc * v).astype(dtype),
        v=(acc * (params.u + k)).astype(dtype),
        w_raw=grad_w * special.expit(params.w_raw),
        u=(acc * v).sum(axis=(0, 1)),
    )


class WkvFn(Function):
    def forward(self, k, v, w_raw, u):
        self.seq = WkvSequence(k, v)
        self.params = WkvParams(w_raw, u)
        self.param_dtype = w_raw.dtype
        return wkv_forward_scan(self.seq, self.params)

    def backward(self, grad):
        grads = wkv_backward(self.seq, self.params, grad)
        return grads.k, grads.v, grads.w_raw.astype(self.param_dtype), grads.u.astype(self.param_dtype)


def wkv(k: Tensor, v: Tensor, w_raw: Tensor, u: Tensor) -> Tensor:
    """Differentiable scan over (B, T, C) keys and values."""
    return WkvFn.apply(k, v, w_raw, u)


def flatten_raster(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major over pixels."""
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1)


def unflatten_raster(seq: Tensor, height: int, width: int) -> Tensor:
    B, T, C = seq.shape
    if T != height * width:
        raise ValueError(f"sequence length {T} does not fill a {height}x{width} raster")
    return seq.transpose(0, 2, 1).reshape(B, C, height, width)
