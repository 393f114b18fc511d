"""gen-phantoms: write a synthetic dataset with manifest and metadata."""
import argparse
import logging
from pathlib import Path

from pydantic import ValidationError

from mdrwkv.commands import describe_error
from mdrwkv.config import settings
from mdrwkv.models.schemas import PhantomConfig
from mdrwkv.services.dataset import build_manifest
from mdrwkv.services.phantom import class_names, generate_phantoms
from mdrwkv.services.preview import save_preview

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-phantoms", help="generate synthetic phantom samples")
    parser.add_argument("--count", type=int, required=True)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--seed", type=int, default=settings.default_seed)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--png", action="store_true", default=settings.preview_png, help="also write PNG previews")
    parser.set_defaults(handler=run)


def gen_phantoms(count: int, size: int, classes: int, seed: int, out: Path, png: bool = False) -> Path:
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    config = PhantomConfig(size=size, num_classes=classes)
    out.mkdir(parents=True, exist_ok=True)
    samples = list(generate_phantoms(config, count, seed))
    meta = {
        "count": count,
        "num_classes": classes,
        "size": size,
        "seed": seed,
        "class_names": class_names(config),
    }
    manifest = build_manifest(out, samples, meta)
    if png:
        preview_dir = out / "previews"
        preview_dir.mkdir(exist_ok=True)
        for sample in samples:
            save_preview(preview_dir / f"{sample.id}.png", sample.image, sample.mask)
    logger.info(f"Generated {count} phantoms ({size}x{size}, {classes} classes) in {out}")
    return manifest


def run(args: argparse.Namespace) -> int:
    try:
        gen_phantoms(args.count, args.size, args.classes, args.seed, args.out, args.png)
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"gen-phantoms failed: {describe_error(e)}")
        return 1
    return 0
