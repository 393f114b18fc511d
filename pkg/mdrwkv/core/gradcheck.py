"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from mdrwkv.core.nn import Module
from mdrwkv.core.tensor import Tensor, backward

# below this gradient norm, differences are judged absolutely
ABS_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: list[float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-3


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), ABS_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-3,
    max_samples: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backward against central differences in float64.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. ``max_samples`` limits the number of
    perturbed elements per input.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    projection = rng.standard_normal(out.shape)

    def objective(values: list[np.ndarray]) -> float:
        result = fn(*(Tensor(v) for v in values))
        return float(np.sum(result.data * projection))

    loss = (out * Tensor(projection)).sum()
    backward(loss)

    errors = []
    for index, (array, tensor) in enumerate(zip(arrays, tensors)):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(array)
        positions = np.arange(array.size)
        if max_samples is not None and array.size > max_samples:
            positions = rng.choice(array.size, size=max_samples, replace=False)
        numeric = np.zeros(len(positions))
        for slot, flat in enumerate(positions):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[index].reshape(-1)[flat] += eps
            minus[index].reshape(-1)[flat] -= eps
            numeric[slot] = (objective(plus) - objective(minus)) / (2 * eps)
        errors.append(_relative_error(analytic.reshape(-1)[positions], numeric))
    return GradCheckResult(max_rel_error=max(errors, default=0.0), per_input=errors)


def gradcheck_module(
    module: Module,
    forward: Callable[[], Tensor],
    eps: float = 1e-3,
    max_samples: int = 6,
    seed: int = 0,
) -> GradCheckResult:
    """Check the gradients ``forward`` sends to every parameter of ``module``.

    The module should already be in float64 (``module.astype``) and free of
    stochastic layers. Up to ``max_samples`` entries per parameter are perturbed.
    """
    rng = np.random.default_rng(seed)
    out = forward()
    projection = rng.standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(forward().data * projection))

    module.zero_grad()
    backward((out * Tensor(projection)).sum())

    errors = []
    for _, param in module.named_parameters():
        flat = param.data.reshape(-1)
        positions = np.arange(flat.size)
        if flat.size > max_samples:
            positions = rng.choice(flat.size, size=max_samples, replace=False)
        numeric = np.zeros(len(positions))
        for slot, index in enumerate(positions):
            original = flat[index]
            flat[index] = original + eps
            plus = objective()
            flat[index] = original - eps
            minus = objective()
            flat[index] = original
            numeric[slot] = (plus - minus) / (2 * eps)
        errors.append(_relative_error(param.grad.reshape(-1)[positions], numeric))
    return GradCheckResult(max_rel_error=max(errors, default=0.0), per_input=errors)
