"""Dice + cross-entropy loss, AdamW, cosine schedule, TTA and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from mdrwkv.core import ops
from mdrwkv.core.nn import Module, Parameter
from mdrwkv.core.tensor import Tensor, backward, no_grad
from mdrwkv.models.schemas import OptimHyper
from mdrwkv.services.dataset import Sample, augment, collate

logger = logging.getLogger(__name__)

DICE_SMOOTH = 1e-5


class Segmenter(Protocol):
    """Anything that maps (B, C, S, S) images to (B, K, S, S) logits."""

    num_classes: int

    def logits(self, images: np.ndarray) -> np.ndarray: ...


# ════════════════════════════════════════════
#  Loss
# ════════════════════════════════════════════


def one_hot(target: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    target = np.asarray(target)
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise ValueError(f"class ids must lie in [0, {num_classes}), got range [{target.min()}, {target.max()}]")
    return np.moveaxis(np.eye(num_classes, dtype=dtype)[target.astype(np.int64)], -1, 1)


def _check_target(logits: Tensor, target: np.ndarray) -> None:
    if logits.ndim != 4 or np.shape(target) != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"target shape {np.shape(target)} does not match logits shape {logits.shape}")


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    _check_target(logits, target)
    onehot = Tensor(one_hot(target, logits.shape[1], logits.dtype))
    return -(ops.log_softmax(logits, axis=1) * onehot).sum(axis=1).mean()


def soft_dice(logits: Tensor, target: np.ndarray, smooth: float = DICE_SMOOTH) -> Tensor:
    """Mean over classes of (2|P.G| + s) / (|P| + |G| + s) on softmax probabilities."""
    _check_target(logits, target)
    onehot = Tensor(one_hot(target, logits.shape[1], logits.dtype))
    probs = ops.softmax(logits, axis=1)
    intersection = (probs * onehot).sum(axis=(0, 2, 3))
    denominator = probs.sum(axis=(0, 2, 3)) + onehot.sum(axis=(0, 2, 3))
    return ((intersection * 2.0 + smooth) / (denominator + smooth)).mean()


def dice_ce_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    return cross_entropy(logits, target) * 0.5 + (1.0 - soft_dice(logits, target)) * 0.5


# ════════════════════════════════════════════
#  Optimizer and schedule
# ════════════════════════════════════════════


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "OptimState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimState,
    hyper: OptimHyper,
    lr_t: float,
) -> OptimState:
    """Bias-corrected Adam with decoupled weight decay; updates ``params`` in place."""
    beta1, beta2 = hyper.betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + hyper.eps)
        p -= lr_t * hyper.weight_decay * p + lr_t * update
    return state


class AdamW:
    def __init__(self, params: Sequence[Parameter], hyper: OptimHyper):
        self.params = list(params)
        self.hyper = hyper
        self.state = OptimState.zeros_like([p.data for p in self.params])

    def step(self, lr_t: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, self.hyper, lr_t)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


def cosine_lr(step: int, hyper: OptimHyper) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if hyper.total_steps is None:
        raise ValueError("total_steps is not set")
    if step >= hyper.total_steps:
        return hyper.lr_min
    return hyper.lr_min + 0.5 * (hyper.lr0 - hyper.lr_min) * (1.0 + math.cos(math.pi * step / hyper.total_steps))


# ════════════════════════════════════════════
#  Inference
# ════════════════════════════════════════════

TTA_FLIPS: tuple[tuple[int, ...], ...] = ((), (3,), (2,), (2, 3))


def tta_predict(model: Segmenter, images: np.ndarray) -> np.ndarray:
    """Class probabilities averaged over identity, h-, v- and hv-flips, un-flipped first."""
    x = Tensor(np.asarray(images, dtype=np.float32))
    total = None
    with no_grad():
        for axes in TTA_FLIPS:
            view = ops.flip(x, axes) if axes else x
            probs = ops.softmax(Tensor(model.logits(view.data)), axis=1)
            probs = ops.flip(probs, axes) if axes else probs
            total = probs.data if total is None else total + probs.data
    return total / len(TTA_FLIPS)


def predict_proba(model: Segmenter, images: np.ndarray, tta: bool = False) -> np.ndarray:
    if tta:
        return tta_predict(model, images)
    with no_grad():
        return ops.softmax(Tensor(model.logits(images)), axis=1).data


def predict_masks(model: Segmenter, images: np.ndarray, tta: bool = False) -> np.ndarray:
    return predict_proba(model, images, tta).argmax(axis=1).astype(np.uint8)


# ════════════════════════════════════════════
#  Training loop
# ════════════════════════════════════════════


@dataclass
class LossRecord:
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    records: list[LossRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


def planned_steps(num_samples: int, epochs: int, batch_size: int, max_steps: Optional[int] = None) -> int:
    steps = epochs * math.ceil(num_samples / batch_size)
    return min(steps, max_steps) if max_steps is not None else steps


def train(
    model: Module,
    dataset: Sequence[Sample],
    hyper: OptimHyper,
    epochs: int,
    batch_size: int,
    seed: int,
    augment_flags: Sequence[str] = (),
    max_steps: Optional[int] = None,
    log_every: int = 10,
) -> TrainResult:
    """Seeded shuffled mini-batch training with a per-step cosine schedule.

    Runs for ``epochs`` passes over ``dataset`` or until ``max_steps``.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.parameters(), hyper)
    result = TrainResult()
    total = planned_steps(n, epochs, batch_size, max_steps)
    if hyper.total_steps is None:
        hyper = hyper.model_copy(update={"total_steps": total})
    logger.info(f"Training: {n} samples, {total} steps, batch {batch_size}, lr0 {hyper.lr0}")

    model.train()
    step = 0
    while step < total:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if step >= total:
                break
            batch = [dataset[int(i)] for i in order[start : start + batch_size]]
            if augment_flags:
                batch = [augment(s, rng, augment_flags) for s in batch]
            images, masks = collate(batch)

            model.zero_grad()
            loss = dice_ce_loss(model(Tensor(images)), masks)
            backward(loss)
            if hyper.grad_clip is not None:
                clip_grad_norm(model.parameters(), hyper.grad_clip)
            lr = cosine_lr(step, hyper)
            optimizer.step(lr)

            result.records.append(LossRecord(step, lr, loss.item()))
            if step % log_every == 0 or step == total - 1:
                logger.info(f"step {step:5d}  lr {lr:.6f}  loss {loss.item():.6f}")
            step += 1
    return result


def write_loss_csv(path: Path, records: Sequence[LossRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "lr", "loss"])
        for r in records:
            writer.writerow([r.step, f"{r.lr:.6f}", f"{r.loss:.6f}"])
