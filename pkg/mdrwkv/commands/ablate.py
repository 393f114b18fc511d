"""ablate: train one or all toggle variants of the architecture."""
import argparse
import logging
from pathlib import Path

from mdrwkv.commands import describe_error, load_run_config
from mdrwkv.commands.train import train_run
from mdrwkv.models.network import param_count
from mdrwkv.models.schemas import VARIANTS, AblationRow, RunConfig
from mdrwkv.services.report import write_ablation

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="train an ablation variant (ver1..ver8, or all)")
    parser.add_argument("--variant", required=True, choices=[*VARIANTS, "all"])
    parser.add_argument("--config", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def variant_config(config: RunConfig, variant: str) -> RunConfig:
    return config.model_copy(update={"model": config.model.with_variant(variant)})


def run_variant(config: RunConfig, variant: str, run_dir: Path) -> AblationRow:
    variant_cfg = variant_config(config, variant)
    logger.info(f"Ablation {variant}: {VARIANTS[variant]} -> {run_dir}")
    outcome = train_run(variant_cfg, run_dir)
    model_cfg = variant_cfg.model
    return AblationRow(
        variant=variant,
        use_sk_attention=model_cfg.use_sk_attention,
        use_deformable_shift=model_cfg.use_deformable_shift,
        use_cross_stage_fusion=model_cfg.use_cross_stage_fusion,
        param_count=param_count(outcome.model),
        mean_dice=outcome.metrics.mean_dice if outcome.metrics else None,
        mean_hd95=outcome.metrics.mean_hd95 if outcome.metrics else None,
    )


def ablate(config: RunConfig, variant: str, out: Path) -> list[AblationRow]:
    if variant == "all":
        rows = [run_variant(config, name, out / name) for name in VARIANTS]
        write_ablation(rows, out)
        return rows
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    return [run_variant(config, variant, out)]


def run(args: argparse.Namespace) -> int:
    try:
        ablate(load_run_config(args.config), args.variant, args.out)
    except (ValueError, OSError) as e:
        logger.error(f"ablate failed: {describe_error(e)}")
        return 1
    return 0
