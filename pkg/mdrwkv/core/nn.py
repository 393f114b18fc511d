"""Parameter containers and the small set of layers the network is built from."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from mdrwkv.core import ops
from mdrwkv.core.tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


class Module:
    """Tree of parameters, buffers and sub-modules in registration order."""

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(f"unknown buffer '{name}'")
        self.register_buffer(name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = np.zeros_like(param.data)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (float64 for gradient checks)."""
        for param in self.parameters():
            param.data = param.data.astype(dtype)
            param.grad = None
        for module in self.modules():
            for name, buf in list(module._buffers.items()):
                module.register_buffer(name, buf.astype(dtype))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        params = dict(self.named_parameters())
        for name, value in state.items():
            if value.shape != expected[name].shape:
                raise ValueError(f"shape mismatch for '{name}': {value.shape} vs {expected[name].shape}")
            value = np.asarray(value, dtype=expected[name].dtype)
            if name in params:
                params[name].data = value.copy()
            else:
                owner_path, _, buf_name = name.rpartition(".")
                owner = self
                for part in owner_path.split(".") if owner_path else []:
                    owner = owner._modules[part]
                owner.set_buffer(buf_name, value.copy())

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        groups: int = 1,
    ):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        per_group = in_channels // groups
        fan_in = per_group * kernel_size * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, per_group, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Norm2d(Module):
    """Per-channel affine normalization in layer or batch mode.

    Batch mode tracks running statistics (momentum 0.1) that replace the
    batch statistics in eval mode.
    """

    momentum = 0.1

    def __init__(self, channels: int, mode: ops.NormMode = "layer", eps: float = 1e-5):
        super().__init__()
        if mode not in ops.NORM_AXES:
            raise ValueError(f"unknown norm mode '{mode}'")
        self.mode = mode
        self.eps = eps
        self.scale = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        if mode == "batch":
            self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
            self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "layer":
            return ops.normalize(x, "layer", self.scale, self.bias, self.eps)
        if self.training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3)) * (n / max(n - 1, 1))
            m = self.momentum
            self.set_buffer("running_mean", ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype))
            self.set_buffer("running_var", ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype))
            return ops.normalize(x, "batch", self.scale, self.bias, self.eps)
        return ops.normalize(
            x, "batch", self.scale, self.bias, self.eps, running=(self.running_mean, self.running_var)
        )


class DepthwiseSeparableConv2d(Module):
    """k x k depthwise then 1 x 1 pointwise, bias-free."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        self.dw_weight = Parameter(
            uniform_init(rng, (in_channels, 1, kernel_size, kernel_size), kernel_size * kernel_size)
        )
        self.pw_weight = Parameter(uniform_init(rng, (out_channels, in_channels, 1, 1), in_channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_separable_conv(x, self.dw_weight, self.pw_weight)
