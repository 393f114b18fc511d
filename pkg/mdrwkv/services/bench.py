"""Wall-clock comparison of the linear scan and the quadratic reference."""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mdrwkv.core.wkv import WkvParams, WkvSequence, wkv_forward_naive, wkv_forward_scan

logger = logging.getLogger(__name__)

SANITY_TOLERANCE = 1e-5
IMPLEMENTATIONS: dict[str, Callable[[WkvSequence, WkvParams], np.ndarray]] = {
    "scan": wkv_forward_scan,
    "naive": wkv_forward_naive,
}


@dataclass
class BenchRow:
    impl: str
    length: int
    median_ns: int


def make_inputs(length: int, channels: int, seed: int) -> tuple[WkvSequence, WkvParams]:
    rng = np.random.default_rng([seed, length])
    k = rng.uniform(-2.0, 2.0, size=(1, length, channels)).astype(np.float32)
    v = rng.uniform(-2.0, 2.0, size=(1, length, channels)).astype(np.float32)
    return WkvSequence(k, v), WkvParams.init(channels, rng)


def check_agreement(seq: WkvSequence, params: WkvParams) -> float:
    scan = wkv_forward_scan(seq, params).astype(np.float64)
    naive = wkv_forward_naive(seq, params).astype(np.float64)
    diff = float(np.max(np.abs(scan - naive)))
    if diff >= SANITY_TOLERANCE:
        raise ValueError(f"scan and naive disagree by {diff:.3e} at T={seq.length}")
    return diff


def time_call(fn: Callable[[], object], repeats: int) -> int:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    return int(statistics.median(samples))


def run_benchmark(channels: int, lengths: Sequence[int], repeats: int, seed: int = 0) -> list[BenchRow]:
    if any(t < 1 for t in lengths):
        raise ValueError(f"lengths must be >= 1, got {list(lengths)}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    rows = []
    for length in lengths:
        seq, params = make_inputs(length, channels, seed)
        diff = check_agreement(seq, params)
        logger.info(f"T={length}: scan/naive max |diff| {diff:.2e}")
        for impl, fn in IMPLEMENTATIONS.items():
            rows.append(BenchRow(impl, length, time_call(lambda: fn(seq, params), repeats)))
    return rows


def scaling_ratio(rows: Sequence[BenchRow], impl: str, short: int, long: int) -> float:
    times = {r.length: r.median_ns for r in rows if r.impl == impl}
    return times[long] / max(times[short], 1)
