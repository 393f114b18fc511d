"""Checkpoint directory: one ``.mdt`` file per parameter/buffer plus ``meta.json``."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from mdrwkv.models.network import MdRwkvUNet
from mdrwkv.models.schemas import ModelConfig
from mdrwkv.services.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
PARAMS_DIR = "params"


def save_checkpoint(model: MdRwkvUNet, directory: Path, step: int, seed: int) -> Path:
    directory = Path(directory)
    (directory / PARAMS_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for name, value in model.state_dict().items():
        write_tensor(directory / PARAMS_DIR / f"{name}.mdt", np.asarray(value, dtype=np.float32))
        entries.append({"name": name, "shape": list(value.shape)})
    meta = {
        "config": model.config.model_dump(mode="json"),
        "seed": seed,
        "step": step,
        "entries": entries,
    }
    (directory / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Checkpoint saved: {directory} ({len(entries)} tensors, step {step})")
    return directory


def read_meta(directory: Path) -> dict:
    meta_path = Path(directory) / META_FILE
    if not meta_path.exists():
        raise FileNotFoundError(f"checkpoint metadata not found: {meta_path}")
    return json.loads(meta_path.read_text(encoding="utf-8"))


def load_checkpoint(directory: Path) -> tuple[MdRwkvUNet, dict]:
    """Rebuild the model from the stored config and restore every tensor."""
    directory = Path(directory)
    meta = read_meta(directory)
    config = ModelConfig.model_validate(meta["config"])
    model = MdRwkvUNet(config, seed=meta.get("seed", 0))
    state = {entry["name"]: read_tensor(directory / PARAMS_DIR / f"{entry['name']}.mdt") for entry in meta["entries"]}
    model.load_state_dict(state)
    logger.info(f"Checkpoint loaded: {directory} (step {meta['step']})")
    return model, meta
