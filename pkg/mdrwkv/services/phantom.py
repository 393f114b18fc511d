"""Synthetic multi-organ phantoms.

Each organ is a rotated ellipse whose radius is modulated by a few
sinusoidal lobes. Organs are drawn from large to small and later organs
overwrite earlier ones in the mask.
"""
from __future__ import annotations

import logging
from typing import Iterator, Union

import numpy as np

from mdrwkv.models.schemas import PhantomConfig
from mdrwkv.services.dataset import Sample

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

LARGEST_RADIUS = 0.24
SMALLEST_RADIUS = 0.065
MIN_TO_MAX_RADIUS = 0.65


def default_radius_ranges(organs: int) -> list[tuple[float, float]]:
    """Geometric size ladder; the smallest organ stays under 2% of the image area."""
    if organs == 1:
        maxima = np.array([SMALLEST_RADIUS])
    else:
        maxima = np.geomspace(LARGEST_RADIUS, SMALLEST_RADIUS, organs)
    return [(float(MIN_TO_MAX_RADIUS * r), float(r)) for r in maxima]


def default_intensities(organs: int) -> list[float]:
    return [float(m) for m in np.linspace(0.35, 0.9, organs)]


def class_names(config: PhantomConfig) -> list[str]:
    if config.class_names is not None:
        return list(config.class_names)
    return ["background"] + [f"organ_{i}" for i in range(1, config.num_classes)]


def _draw_organs(config: PhantomConfig, rng: np.random.Generator) -> list[np.ndarray]:
    S = config.size
    amp = config.deformation_amplitude
    ranges = config.radius_ranges or default_radius_ranges(config.num_classes - 1)
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)

    organs = []
    for r_min, r_max in ranges:
        a, b = rng.uniform(r_min * S, r_max * S, size=2)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        margin = min(r_max * (1.0 + amp) * S, S / 2.0)
        cy, cx = rng.uniform(margin, S - margin, size=2)

        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
        rho = np.hypot(u, v)
        limit = 1.0 + amp * np.sin(config.lobes * np.arctan2(v, u) + phase)
        organs.append(rho <= limit)
    return organs


def organ_masks(config: PhantomConfig, seed: Seed) -> list[np.ndarray]:
    """The individual organ regions of ``generate_phantom`` before overlap resolution."""
    return _draw_organs(config, np.random.default_rng(seed))


def generate_phantom(config: PhantomConfig, seed: Seed, sample_id: str = "phantom") -> Sample:
    rng = np.random.default_rng(seed)
    organs = _draw_organs(config, rng)
    means = config.intensity_means or default_intensities(len(organs))

    mask = np.zeros((config.size, config.size), dtype=np.uint8)
    image = np.full((config.size, config.size), config.background_mean, dtype=np.float64)
    for cls, (region, mean) in enumerate(zip(organs, means), start=1):
        mask[region] = cls
        image[region] = mean
    if config.noise_sigma > 0:
        image += rng.normal(0.0, config.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)[None]
    return Sample(sample_id, image, mask)


def generate_phantoms(config: PhantomConfig, count: int, seed: int) -> Iterator[Sample]:
    """``count`` phantoms, sample i seeded from (seed, i)."""
    width = max(len(str(max(count - 1, 0))), 4)
    for i in range(count):
        yield generate_phantom(config, np.random.SeedSequence([seed, i]), sample_id=f"case_{i:0{width}d}")
