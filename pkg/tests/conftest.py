import json
from pathlib import Path

import numpy as np
import pytest

from mdrwkv.models.schemas import ModelConfig, PhantomConfig
from mdrwkv.services.dataset import build_manifest
from mdrwkv.services.phantom import class_names, default_intensities, generate_phantoms


class GroundTruthEcho:
    """Maps each pixel back to the class whose phantom intensity is nearest.

    Exact on noise-free phantoms and flip-equivariant by construction.
    """

    def __init__(self, means: list[float]):
        self.means = np.asarray(means, dtype=np.float32)
        self.num_classes = len(means)

    def logits(self, images: np.ndarray) -> np.ndarray:
        distance = np.abs(images[:, 0][:, None] - self.means[None, :, None, None])
        return -50.0 * distance


class ConstantBackground:
    def __init__(self, num_classes: int):
        self.num_classes = num_classes

    def logits(self, images: np.ndarray) -> np.ndarray:
        B, _, H, W = images.shape
        out = np.zeros((B, self.num_classes, H, W), dtype=np.float32)
        out[:, 0] = 10.0
        return out


def clean_phantom_config(size: int = 32, classes: int = 4) -> PhantomConfig:
    return PhantomConfig(size=size, num_classes=classes, noise_sigma=0.0)


def write_phantom_dir(directory: Path, config: PhantomConfig, count: int, seed: int) -> Path:
    meta = {"num_classes": config.num_classes, "size": config.size, "seed": seed, "class_names": class_names(config)}
    build_manifest(directory, generate_phantoms(config, count, seed), meta)
    return directory


def echo_model(config: PhantomConfig) -> GroundTruthEcho:
    return GroundTruthEcho([config.background_mean] + default_intensities(config.num_classes - 1))


def tiny_model_config(**overrides) -> ModelConfig:
    fields = dict(
        num_classes=3,
        stages=2,
        channels=[4, 8],
        blocks_per_stage=[1, 1],
        image_size=16,
        drop_path_rate=0.0,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def write_run_config(path: Path, train_dir: Path, **sections) -> Path:
    config = {
        "model": tiny_model_config().model_dump(mode="json"),
        "optim": {"lr0": 1e-3},
        "data": {"train_dir": str(train_dir), "batch_size": 2, "epochs": 1, "max_steps": 2, "seed": 17},
        "eval": {"tta": False},
    }
    for key, value in sections.items():
        config[key] = {**config.get(key, {}), **value}
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean_phantoms(tmp_path):
    config = clean_phantom_config()
    return write_phantom_dir(tmp_path / "clean", config, count=4, seed=5), config


@pytest.fixture
def tiny_phantoms(tmp_path):
    config = PhantomConfig(size=16, num_classes=3)
    return write_phantom_dir(tmp_path / "tiny", config, count=4, seed=3)
