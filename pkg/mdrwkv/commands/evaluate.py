"""eval: Dice/HD95 report for a checkpoint on a labelled dataset."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from mdrwkv.commands import describe_error
from mdrwkv.models.checkpoint import load_checkpoint
from mdrwkv.models.schemas import MetricsReport
from mdrwkv.services.dataset import load_dataset
from mdrwkv.services.metrics import evaluate
from mdrwkv.services.report import render_metrics_text, write_metrics
from mdrwkv.services.training import Segmenter

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="evaluate a checkpoint")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True)
    parser.add_argument("--tta", action="store_true", help="average over flip test-time augmentation")
    parser.add_argument("--out", type=Path, default=None, help="report directory (default: the checkpoint's parent)")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.set_defaults(handler=run)


def evaluate_dataset(
    model: Segmenter,
    data_dir: Path,
    tta: bool,
    out: Optional[Path],
    batch_size: int = 8,
) -> MetricsReport:
    dataset = load_dataset(data_dir)
    if dataset.num_classes is not None and dataset.num_classes != model.num_classes:
        raise ValueError(
            f"class-count mismatch: model predicts {model.num_classes} classes, dataset has {dataset.num_classes}"
        )
    report = evaluate(model, dataset, tta=tta, batch_size=batch_size, class_names=dataset.class_names)
    if out is not None:
        write_metrics(report, out)
    return report


def run(args: argparse.Namespace) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
        out = args.out if args.out is not None else Path(args.checkpoint).resolve().parent
        report = evaluate_dataset(model, args.data, args.tta, out, args.batch_size)
    except (ValueError, OSError) as e:
        logger.error(f"eval failed: {describe_error(e)}")
        return 1
    sys.stdout.write(render_metrics_text(report))
    return 0
