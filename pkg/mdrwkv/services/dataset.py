"""Paired image/mask samples on disk, listed by ``manifest.jsonl``."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from mdrwkv.services.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.jsonl"
DATASET_META_FILE = "dataset.json"
AUGMENT_FLAGS = ("hflip", "vflip", "rot90")


@dataclass(frozen=True)
class Sample:
    """image: (1, S, S) float32 in [0, 1]; mask: (S, S) uint8 class ids."""

    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[1:] != self.mask.shape:
            raise ValueError(f"sample {self.id}: image {self.image.shape} does not match mask {self.mask.shape}")


@dataclass(frozen=True)
class SampleRef:
    id: str
    image: Path
    mask: Path

    def load(self) -> Sample:
        image = read_tensor(self.image).astype(np.float32)
        mask = read_tensor(self.mask).astype(np.uint8)
        return Sample(self.id, image, mask)


@dataclass
class Dataset:
    """Lazily loaded samples in manifest order."""

    root: Path
    refs: list[SampleRef]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.refs)

    def __getitem__(self, index: int) -> Sample:
        return self.refs[index].load()

    def __iter__(self) -> Iterator[Sample]:
        return (ref.load() for ref in self.refs)

    @property
    def num_classes(self) -> Optional[int]:
        return self.meta.get("num_classes")

    @property
    def class_names(self) -> Optional[list[str]]:
        return self.meta.get("class_names")


def build_manifest(directory: Path, samples: Iterable[Sample], meta: Optional[dict] = None) -> Path:
    """Write each sample as ``<id>.img.mdt`` / ``<id>.msk.mdt`` and list them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    seen: set[str] = set()
    for sample in samples:
        if sample.id in seen:
            raise ValueError(f"duplicate sample id '{sample.id}'")
        seen.add(sample.id)
        image_name, mask_name = f"{sample.id}.img.mdt", f"{sample.id}.msk.mdt"
        write_tensor(directory / image_name, sample.image.astype(np.float32))
        write_tensor(directory / mask_name, sample.mask.astype(np.uint8))
        lines.append(json.dumps({"id": sample.id, "image": image_name, "mask": mask_name}))
    manifest = directory / MANIFEST_FILE
    with open(manifest, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))
    if meta is not None:
        (directory / DATASET_META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Manifest written: {manifest} ({len(lines)} samples)")
    return manifest


def load_dataset(directory: Path) -> Dataset:
    directory = Path(directory)
    manifest = directory / MANIFEST_FILE
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    refs: list[SampleRef] = []
    seen: set[str] = set()
    for number, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            sample_id, image, mask = str(entry["id"]), entry["image"], entry["mask"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValueError(f"{manifest}:{number}: invalid manifest line ({e})") from e
        if sample_id in seen:
            raise ValueError(f"duplicate sample id '{sample_id}' in {manifest}")
        seen.add(sample_id)
        ref = SampleRef(sample_id, directory / image, directory / mask)
        for path in (ref.image, ref.mask):
            if not path.exists():
                raise FileNotFoundError(f"sample '{sample_id}': missing file {path}")
        refs.append(ref)

    meta_path = directory / DATASET_META_FILE
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    logger.info(f"Dataset loaded: {directory} ({len(refs)} samples)")
    return Dataset(directory, refs, meta)


# ── Augmentation ──────────────────────────────


def apply_transforms(sample: Sample, hflip: bool = False, vflip: bool = False, rot90: int = 0) -> Sample:
    """Exact geometric transforms applied identically to image and mask."""
    image, mask = sample.image, sample.mask
    if hflip:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if vflip:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    if rot90 % 4:
        image, mask = np.rot90(image, rot90, axes=(1, 2)), np.rot90(mask, rot90, axes=(0, 1))
    return Sample(sample.id, np.ascontiguousarray(image), np.ascontiguousarray(mask))


def augment(sample: Sample, rng: np.random.Generator, flags: Sequence[str]) -> Sample:
    unknown = set(flags) - set(AUGMENT_FLAGS)
    if unknown:
        raise ValueError(f"unknown augmentation flags {sorted(unknown)}")
    if not flags:
        return sample
    return apply_transforms(
        sample,
        hflip="hflip" in flags and bool(rng.random() < 0.5),
        vflip="vflip" in flags and bool(rng.random() < 0.5),
        rot90=int(rng.integers(4)) if "rot90" in flags else 0,
    )


def collate(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return images, masks
