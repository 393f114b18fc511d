"""PNG previews: grayscale image next to colour-coded label masks."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
    ],
    dtype=np.uint8,
)


def colorize(mask: np.ndarray) -> np.ndarray:
    return PALETTE[np.asarray(mask, dtype=np.int64) % len(PALETTE)]


def render_preview(image: np.ndarray, mask: np.ndarray, pred: Optional[np.ndarray] = None) -> Image.Image:
    gray = (np.clip(np.asarray(image).reshape(mask.shape), 0.0, 1.0) * 255).round().astype(np.uint8)
    panels = [np.repeat(gray[..., None], 3, axis=2), colorize(mask)]
    if pred is not None:
        panels.append(colorize(pred))
    return Image.fromarray(np.concatenate(panels, axis=1))


def save_preview(path: Path, image: np.ndarray, mask: np.ndarray, pred: Optional[np.ndarray] = None) -> Path:
    render_preview(image, mask, pred).save(path, format="PNG")
    return Path(path)
