"""predict: write ``<id>.pred.mdt`` label masks for every sample of a dataset."""
import argparse
import logging
from pathlib import Path

from mdrwkv.commands import describe_error
from mdrwkv.config import settings
from mdrwkv.models.checkpoint import load_checkpoint
from mdrwkv.services.dataset import collate, load_dataset
from mdrwkv.services.preview import save_preview
from mdrwkv.services.tensor_io import write_tensor
from mdrwkv.services.training import Segmenter, predict_masks

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("predict", help="segment a dataset with a checkpoint")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--tta", action="store_true")
    parser.add_argument("--png", action="store_true", default=settings.preview_png)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.set_defaults(handler=run)


def predict_dataset(model: Segmenter, data_dir: Path, out: Path, tta: bool = False, png: bool = False,
                    batch_size: int = 8) -> int:
    dataset = load_dataset(data_dir)
    out.mkdir(parents=True, exist_ok=True)
    for start in range(0, len(dataset), batch_size):
        batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        images, masks = collate(batch)
        preds = predict_masks(model, images, tta)
        for sample, pred in zip(batch, preds):
            write_tensor(out / f"{sample.id}.pred.mdt", pred)
            if png:
                save_preview(out / f"{sample.id}.png", sample.image, sample.mask, pred)
    logger.info(f"Predicted {len(dataset)} samples into {out}")
    return len(dataset)


def run(args: argparse.Namespace) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
        predict_dataset(model, args.data, args.out, args.tta, args.png, args.batch_size)
    except (ValueError, OSError) as e:
        logger.error(f"predict failed: {describe_error(e)}")
        return 1
    return 0
