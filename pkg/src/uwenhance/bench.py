"""Wall-clock scaling of the sequence mixers.

Each operator is timed on a length-``L`` input ``repeats`` times (after one
warm-up call) with gradients disabled; rows report the median and 90th
percentile in nanoseconds.
"""

from __future__ import annotations

import csv
import gc
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T

BENCH_COLUMNS = ("operator", "L", "C", "N", "median_ns", "p90_ns")
OPERATORS = ("scan", "attention", "swsa")


@dataclass
class BenchRow:
    operator: str
    L: int
    C: int
    N: int
    median_ns: int
    p90_ns: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in BENCH_COLUMNS}


def grid_for_length(L: int) -> tuple:
    """Near-square ``(H, W)`` with ``H * W == L``."""
    h = 2 ** (int(math.log2(L)) // 2) if L & (L - 1) == 0 else int(math.isqrt(L))
    while L % h:
        h -= 1
    return h, L // h


def _prepare(op: str, L: int, C: int, N: int, rng):
    if op == "scan":
        from .scan import init_scan_params, s6_scan

        params = init_scan_params(C, N, rng)
        x = T.Tensor(rng.standard_normal((L, C)))
        return lambda: s6_scan(x, params)
    if op == "attention":
        from .scan import attention_reference

        x = rng.standard_normal((L, C))
        wq, wk, wv = (rng.standard_normal((C, C)) / math.sqrt(C) for _ in range(3))
        return lambda: attention_reference(x, wq, wk, wv)
    if op == "swsa":
        from .spectral_filter import GlobalFilter

        H, W = grid_for_length(L)
        f = GlobalFilter(H, W, C, rng=rng)
        x = T.Tensor(rng.standard_normal((H, W, C)))
        return lambda: f.filter_only(x)
    raise ValueError(f"unknown operator {op!r}; expected one of {OPERATORS}")


def _summarise(op, L, C, N, samples) -> BenchRow:
    samples = np.asarray(samples)
    return BenchRow(op, L, C, N, int(np.median(samples)), int(np.percentile(samples, 90)))


def time_op(op: str, L: int, C: int = 16, N: int = 16, repeats: int = 20, seed: int = 0) -> BenchRow:
    return run_bench(op, [L], C, N, repeats, seed)[0]


def run_bench(op: str, lengths, C: int = 16, N: int = 16, repeats: int = 20, seed: int = 0) -> list:
    """Time every length ``repeats`` times.

    Repeats are interleaved round-robin across lengths, so slow drift in machine
    load spreads evenly over the rows instead of biasing one of them. The
    garbage collector is paused while timing, as ``timeit`` does.
    """
    lengths = [int(L) for L in lengths]
    fns = [_prepare(op, L, C, N, np.random.default_rng(seed)) for L in lengths]
    samples = [[] for _ in lengths]
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        with T.no_grad():
            for fn in fns:
                fn()
            for _ in range(repeats):
                for fn, acc in zip(fns, samples):
                    t0 = time.perf_counter_ns()
                    fn()
                    acc.append(time.perf_counter_ns() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    return [_summarise(op, L, C, N, acc) for L, acc in zip(lengths, samples)]


def doubling_ratios(rows) -> list:
    """``(L, median(2L) / median(L))`` for consecutive rows whose lengths double."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if b.L == 2 * a.L:
            out.append((a.L, b.median_ns / a.median_ns))
    return out


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow(r.as_dict())
