"""Dice similarity and 95th-percentile Hausdorff distance (pixel units)."""
from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from mdrwkv.models.schemas import ClassMetrics, MetricsReport
from mdrwkv.services.dataset import Sample, collate
from mdrwkv.services.training import Segmenter, predict_masks

logger = logging.getLogger(__name__)

HD_PERCENTILE = 95
EIGHT_NEIGHBOURS = np.ones((3, 3), dtype=bool)


def _regions(pred: np.ndarray, gt: np.ndarray, cls: int) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred == cls, gt == cls


def dice_score(pred: np.ndarray, gt: np.ndarray, cls: int) -> float:
    p, g = _regions(pred, gt, cls)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def boundary(region: np.ndarray) -> np.ndarray:
    """Region pixels with at least one 8-neighbour outside (image border counts as outside)."""
    return region & ~ndimage.binary_erosion(region, structure=EIGHT_NEIGHBOURS, border_value=0)


def hd95(pred: np.ndarray, gt: np.ndarray, cls: int) -> Optional[float]:
    """None when exactly one region is empty; 0.0 when both are."""
    p, g = _regions(pred, gt, cls)
    if not p.any() and not g.any():
        return 0.0
    if not p.any() or not g.any():
        return None
    bp, bg = boundary(p), boundary(g)
    to_gt = ndimage.distance_transform_edt(~bg)[bp]
    to_pred = ndimage.distance_transform_edt(~bp)[bg]
    return float(np.percentile(np.concatenate([to_gt, to_pred]), HD_PERCENTILE))


def _boundary_points_bruteforce(region: np.ndarray) -> np.ndarray:
    padded = np.pad(region, 1)
    points = []
    for y, x in zip(*np.nonzero(region)):
        window = padded[y : y + 3, x : x + 3]
        if not window.all():
            points.append((y, x))
    return np.array(points, dtype=np.int64).reshape(-1, 2)


def hd95_oracle(pred: np.ndarray, gt: np.ndarray, cls: int) -> Optional[float]:
    """All-pairs reference for ``hd95`` with the same boundary and percentile rules."""
    p, g = _regions(pred, gt, cls)
    if not p.any() and not g.any():
        return 0.0
    if not p.any() or not g.any():
        return None
    bp, bg = _boundary_points_bruteforce(p), _boundary_points_bruteforce(g)
    diff = bp[:, None, :] - bg[None, :, :]
    squared = (diff * diff).sum(axis=2)
    to_gt = np.sqrt(squared.min(axis=1).astype(np.float64))
    to_pred = np.sqrt(squared.min(axis=0).astype(np.float64))
    return float(np.percentile(np.concatenate([to_gt, to_pred]), HD_PERCENTILE))


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def summarize(
    dice: dict[int, list[float]],
    hd: dict[int, list[float]],
    num_samples: int,
    tta: bool,
    class_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    classes = []
    for cls in sorted(dice):
        classes.append(
            ClassMetrics(
                cls=cls,
                name=class_names[cls] if class_names and cls < len(class_names) else None,
                dice=_mean(dice[cls]) or 0.0,
                hd95=_mean(hd[cls]),
                hd95_cases=len(hd[cls]),
            )
        )
    defined_hd = [c.hd95 for c in classes if c.hd95 is not None]
    return MetricsReport(
        classes=classes,
        mean_dice=_mean([c.dice for c in classes]) or 0.0,
        mean_hd95=_mean(defined_hd),
        num_samples=num_samples,
        tta=tta,
    )


def evaluate(
    model: Segmenter,
    dataset: Sequence[Sample],
    tta: bool = False,
    batch_size: int = 8,
    class_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Per-class Dice/HD95 averaged over samples, means over foreground classes."""
    foreground = range(1, model.num_classes)
    dice: dict[int, list[float]] = {c: [] for c in foreground}
    hd: dict[int, list[float]] = {c: [] for c in foreground}
    count = 0
    for start in range(0, len(dataset), batch_size):
        batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        images, masks = collate(batch)
        if masks.size and masks.max() >= model.num_classes:
            raise ValueError(f"mask class id {masks.max()} out of range for a {model.num_classes}-class model")
        preds = predict_masks(model, images, tta)
        for pred, gt in zip(preds, masks):
            for cls in foreground:
                dice[cls].append(dice_score(pred, gt, cls))
                value = hd95(pred, gt, cls)
                if value is not None:
                    hd[cls].append(value)
            count += 1
    report = summarize(dice, hd, count, tta, class_names)
    logger.info(f"Evaluated {count} samples: mean Dice {report.mean_dice:.4f}, mean HD95 {report.mean_hd95}")
    return report
