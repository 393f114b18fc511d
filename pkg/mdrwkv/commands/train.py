"""train: fit a model from a run config into a run directory."""
import argparse
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from mdrwkv.commands import describe_error, load_run_config
from mdrwkv.config import settings
from mdrwkv.models.checkpoint import save_checkpoint
from mdrwkv.models.network import MdRwkvUNet, build_model
from mdrwkv.models.schemas import MetricsReport, RunConfig
from mdrwkv.services.dataset import load_dataset
from mdrwkv.services.metrics import evaluate
from mdrwkv.services.report import write_metrics
from mdrwkv.services.training import planned_steps, train, write_loss_csv

logger = logging.getLogger(__name__)

CONFIG_ECHO = "config.json"
LOSS_LOG = "loss.csv"
CHECKPOINT_DIR = "checkpoint"


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train a model from a JSON run config")
    parser.add_argument("--config", type=Path, required=True)
    parser.add_argument("--out", type=Path, default=None, help="run directory (default: <runs_dir>/<config name>)")
    parser.set_defaults(handler=run)


@dataclass
class RunOutcome:
    model: MdRwkvUNet
    run_dir: Path
    steps: int
    metrics: Optional[MetricsReport] = None


def train_run(config: RunConfig, run_dir: Path) -> RunOutcome:
    """Echo the config, train, write ``loss.csv`` and the checkpoint, then
    evaluate on ``data.val_dir`` when one is configured."""
    run_dir.mkdir(parents=True, exist_ok=True)
    data = config.data
    dataset = load_dataset(data.train_dir)
    if dataset.num_classes is not None and dataset.num_classes != config.model.num_classes:
        raise ValueError(
            f"dataset {data.train_dir} has {dataset.num_classes} classes, model expects {config.model.num_classes}"
        )
    total = planned_steps(len(dataset), data.epochs, data.batch_size, data.max_steps)
    if config.optim.total_steps is None:
        config = config.model_copy(update={"optim": config.optim.model_copy(update={"total_steps": max(total, 1)})})
    (run_dir / CONFIG_ECHO).write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")

    model = build_model(config.model, seed=data.seed)
    result = train(
        model,
        dataset,
        config.optim,
        epochs=data.epochs,
        batch_size=data.batch_size,
        seed=data.seed,
        augment_flags=data.augment,
        max_steps=data.max_steps,
        log_every=config.log_every,
    )
    write_loss_csv(run_dir / LOSS_LOG, result.records)
    save_checkpoint(model, run_dir / CHECKPOINT_DIR, step=result.steps, seed=data.seed)

    outcome = RunOutcome(model=model, run_dir=run_dir, steps=result.steps)
    if data.val_dir is not None:
        val = load_dataset(data.val_dir)
        outcome.metrics = evaluate(model, val, tta=config.eval.tta, batch_size=config.eval.batch_size,
                                   class_names=val.class_names)
        write_metrics(outcome.metrics, run_dir)
    return outcome


def default_run_dir(config_path: Path) -> Path:
    return Path(settings.runs_dir) / config_path.stem


def run(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config)
        train_run(config, args.out or default_run_dir(args.config))
    except (ValueError, OSError) as e:
        logger.error(f"train failed: {describe_error(e)}")
        return 1
    return 0
