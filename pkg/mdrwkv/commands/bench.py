"""bench-wkv: time scan vs naive WKV; CSV on standard output."""
import argparse
import csv
import logging
import sys

from mdrwkv.commands import describe_error
from mdrwkv.config import settings
from mdrwkv.services.bench import run_benchmark

logger = logging.getLogger(__name__)


def _lengths(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid length list '{value}'") from e


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench-wkv", help="benchmark the WKV scan against the quadratic reference")
    parser.add_argument("--channels", type=int, default=8)
    parser.add_argument("--lengths", type=_lengths, default=[1024, 2048, 4096, 8192])
    parser.add_argument("--repeats", type=int, default=settings.bench_repeats)
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    try:
        rows = run_benchmark(args.channels, args.lengths, args.repeats, args.seed)
    except ValueError as e:
        logger.error(f"bench-wkv failed: {describe_error(e)}")
        return 1
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["impl", "T", "median_ns"])
    for row in rows:
        writer.writerow([row.impl, row.length, row.median_ns])
    return 0
