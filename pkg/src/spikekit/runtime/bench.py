"""Prefill scaling benchmarks, cache-size profiling, and throughput reports."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NumericError
from .checkpoint import tensor_walk
from .model import Model, prefill

__all__ = [
    "BenchReport",
    "benchmark_prefill",
    "fit_loglog_exponent",
    "memory_profile",
    "count_params",
    "tgs_mfu_report",
    "REFERENCE_TGS",
    "REFERENCE_MFU",
    "DEFAULT_PEAK_FLOPS",
]

# Large-machine throughput figures quoted for context in reports; desk-scale
# numbers are not expected to approach them.
REFERENCE_TGS = 1558.0
REFERENCE_MFU = 0.234

# Rough sustained single-socket CPU GEMM throughput; overridable everywhere.
DEFAULT_PEAK_FLOPS = 5e10


@dataclass
class BenchReport:
    lengths: list
    seconds: dict  # length -> mean wall time
    exponent: float

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "seconds": {str(n): t for n, t in self.seconds.items()},
            "exponent": self.exponent,
        }


def fit_loglog_exponent(lengths, seconds) -> float:
    """Least-squares slope of log(time) against log(length)."""
    if len(lengths) < 2:
        raise DomainError("need at least two lengths to fit an exponent")
    x = np.log(np.asarray(lengths, dtype=np.float64))
    y = np.log(np.asarray(seconds, dtype=np.float64))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def benchmark_prefill(model: Model, lengths, repeats: int = 3, seed: int = 0) -> BenchReport:
    """Time prefill at each length and fit the scaling exponent.

    Lengths must be strictly ascending; one warmup run at the smallest
    length absorbs allocator and BLAS startup costs before timing begins.
    """
    lengths = [int(n) for n in lengths]
    if len(lengths) < 2:
        raise DomainError("need at least two lengths to fit an exponent")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise DomainError("lengths must be strictly ascending")
    if min(lengths) < 2:
        raise DomainError("lengths must be at least 2")
    if repeats < 1:
        raise DomainError("repeats must be at least 1")

    rng = np.random.default_rng(seed)
    vocab = model.config.vocab
    prefill(model, rng.integers(0, vocab, size=lengths[0]))  # warmup

    seconds = {}
    for n in lengths:
        tokens = rng.integers(0, vocab, size=n)
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            prefill(model, tokens)
            times.append(time.perf_counter() - start)
        seconds[n] = float(np.mean(times))
    exponent = fit_loglog_exponent(lengths, [seconds[n] for n in lengths])
    return BenchReport(lengths=lengths, seconds=seconds, exponent=exponent)


def memory_profile(model: Model, lengths, seed: int = 0) -> dict:
    """Total cache bytes left behind by prefill at each prompt length."""
    rng = np.random.default_rng(seed)
    vocab = model.config.vocab
    out = {}
    for n in lengths:
        _, cache = prefill(model, rng.integers(0, vocab, size=int(n)))
        out[int(n)] = cache.nbytes()
    return out


def count_params(model: Model) -> int:
    return int(sum(arr.size for _, arr in tensor_walk(model)))


def tgs_mfu_report(
    tokens: int,
    seconds: float,
    n_params: int,
    devices: int = 1,
    peak_flops: float = DEFAULT_PEAK_FLOPS,
) -> dict:
    """Throughput (tokens/s/device) and achieved fraction of peak FLOPs.

    The FLOP estimate is the forward-only 2 * params * tokens; reference
    large-scale constants ride along for context in emitted reports.
    """
    if seconds <= 0:
        raise NumericError("elapsed time must be positive")
    if devices < 1:
        raise DomainError("device count must be at least 1")
    tgs = tokens / seconds / devices
    flops = 2.0 * n_params * tokens
    mfu = flops / seconds / (peak_flops * devices)
    return {
        "tokens": int(tokens),
        "seconds": float(seconds),
        "params": int(n_params),
        "tgs": tgs,
        "mfu": mfu,
        "peak_flops": peak_flops,
        "reference": {"tgs": REFERENCE_TGS, "mfu": REFERENCE_MFU},
    }
