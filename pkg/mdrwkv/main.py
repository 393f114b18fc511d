"""MD-RWKV-UNet: desk-scale medical image segmentation with WKV accumulation.

Command line: synthetic data -> training -> evaluation / prediction,
plus ablation sweeps and the WKV scan benchmark.
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from mdrwkv.commands import ablate, bench, evaluate, phantoms, predict, train
from mdrwkv.config import settings

logger = logging.getLogger(__name__)

COMMANDS = (phantoms, train, evaluate, ablate, bench, predict)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdrwkv", description="MD-RWKV-UNet segmentation toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    if settings.num_threads_hint:
        logger.info(f"Thread hint: {settings.num_threads_hint}")
    return args.handler(args)
