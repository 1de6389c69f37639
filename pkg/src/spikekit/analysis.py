"""Firing statistics, energy estimates, and raster export for spike trains.

Everything here is pure aggregation over count tensors and their expanded
trains: histograms of spike magnitudes, windowed sparsity, energy per MAC
under fixed per-operation costs, and flat (time, neuron, value) event rows
ready for CSV. Rendering is deliberately left to callers.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, EmptyInputError, WindowError
from .spikes import SpikeCountTensor, SpikeTrain, expand

__all__ = [
    "FiringStats",
    "EnergyConstants",
    "EnergyReport",
    "firing_stats",
    "energy_report",
    "raster_rows",
    "write_raster_csv",
    "stats_document",
]

DEFAULT_RANGES = ((0, 7), (0, 16))


@dataclass(frozen=True)
class FiringStats:
    """Aggregate firing behaviour of one encoded tensor."""

    histogram: dict
    avg_spikes_per_channel: float
    silent_fraction: float
    frac_within: dict
    windowed_sparsity: float

    def __post_init__(self):
        for name in ("silent_fraction", "windowed_sparsity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EnergyConstants:
    """Per-operation costs in picojoules."""

    fp16_mac_pj: float = 1.5
    int8_mac_pj: float = 0.23
    int8_add_pj: float = 0.03

    def __post_init__(self):
        if min(self.fp16_mac_pj, self.int8_mac_pj, self.int8_add_pj) <= 0:
            raise DomainError("energy constants must be positive")


@dataclass(frozen=True)
class EnergyReport:
    avg_spikes: float
    mac_energy_pj: float
    vs_fp16_ratio: float
    vs_int8_ratio: float
    silent: bool = field(default=False)


def firing_stats(counts, train: SpikeTrain = None, window: int = 3, ranges=DEFAULT_RANGES) -> FiringStats:
    """Summarize firing activity of a count tensor.

    The histogram, silent fraction and range fractions are computed over
    |counts|. Average spikes and windowed sparsity come from the expanded
    train; when none is supplied the ternary expansion is used, for which
    total events equal total |count|. Sparsity pads the shared time axis
    up to a multiple of `window` and reports the zero-slot fraction.
    """
    if window < 1:
        raise WindowError(f"window must be >= 1, got {window}")
    arr = counts.counts if isinstance(counts, SpikeCountTensor) else np.asarray(counts)
    if arr.size == 0:
        raise EmptyInputError("cannot summarize an empty count tensor")
    mags = np.abs(arr.reshape(-1))
    if train is None:
        train = expand(arr, "ternary")
    if train.events.shape[0] != arr.size:
        raise DimensionError(
            f"train has {train.events.shape[0]} channels, counts have {arr.size}"
        )

    values, freqs = np.unique(mags, return_counts=True)
    histogram = {int(v): int(f) for v, f in zip(values, freqs)}
    silent = float(np.mean(mags == 0))
    avg = float(np.abs(train.events.astype(np.int64)).sum()) / arr.size
    frac = {
        f"{lo}-{hi}": float(np.mean((mags >= lo) & (mags <= hi))) for lo, hi in ranges
    }

    slots_per_channel = math.ceil(train.timesteps / window) * window
    total_slots = slots_per_channel * arr.size
    if total_slots == 0:
        sparsity = 1.0
    else:
        sparsity = 1.0 - int(np.count_nonzero(train.events)) / total_slots
    return FiringStats(
        histogram=histogram,
        avg_spikes_per_channel=avg,
        silent_fraction=silent,
        frac_within=frac,
        windowed_sparsity=sparsity,
    )


def energy_report(stats, consts: EnergyConstants = EnergyConstants()) -> EnergyReport:
    """Estimate the energy of one accumulate-based MAC.

    Accepts a FiringStats or a bare average-spike value. A silent tensor
    (zero average) is flagged and reported with infinite ratios rather
    than raising.
    """
    avg = getattr(stats, "avg_spikes_per_channel", stats)
    avg = float(avg)
    if avg < 0:
        raise DomainError("average spikes cannot be negative")
    if avg == 0:
        return EnergyReport(
            avg_spikes=0.0,
            mac_energy_pj=0.0,
            vs_fp16_ratio=math.inf,
            vs_int8_ratio=math.inf,
            silent=True,
        )
    mac = avg * consts.int8_add_pj
    return EnergyReport(
        avg_spikes=avg,
        mac_energy_pj=mac,
        vs_fp16_ratio=consts.fp16_mac_pj / mac,
        vs_int8_ratio=consts.int8_mac_pj / mac,
    )


def raster_rows(train: SpikeTrain, channels=None, presence_only: bool = False):
    """Flatten a train to (time, neuron, value) event rows.

    The neuron axis is the last axis of the original tensor; any leading
    axes are treated as token steps, so the time index runs over token
    steps times expanded steps. Rows come out sorted by time then neuron.
    """
    neurons = train.shape[-1]
    tokens = train.events.shape[0] // neurons
    if channels is None:
        channels = range(neurons)
    channels = sorted(set(int(c) for c in channels))
    if not channels:
        raise EmptyInputError("no channels selected for raster export")
    if channels[0] < 0 or channels[-1] >= neurons:
        raise DimensionError(f"channel index out of range for {neurons} neurons")

    rows = []
    t_steps = train.timesteps
    for tok in range(tokens):
        for step in range(t_steps):
            time = tok * t_steps + step
            for ch in channels:
                value = int(train.events[tok * neurons + ch, step])
                if value != 0:
                    rows.append((time, ch, 1 if presence_only else value))
    return rows


def write_raster_csv(path, rows) -> None:
    """Write raster rows to a CSV file with a `time,neuron,value` header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "neuron", "value"])
        writer.writerows(rows)


def stats_document(stats: FiringStats, report: EnergyReport = None) -> dict:
    """Bundle stats (and optionally energy) into a JSON-friendly dict."""
    doc = {
        "histogram": {str(k): v for k, v in sorted(stats.histogram.items())},
        "avg_spikes_per_channel": stats.avg_spikes_per_channel,
        "silent_fraction": stats.silent_fraction,
        "frac_within": dict(stats.frac_within),
        "windowed_sparsity": stats.windowed_sparsity,
    }
    if report is not None:
        doc["energy"] = {
            "avg_spikes": report.avg_spikes,
            "mac_energy_pj": report.mac_energy_pj,
            "vs_fp16_ratio": None if report.silent else report.vs_fp16_ratio,
            "vs_int8_ratio": None if report.silent else report.vs_int8_ratio,
            "silent": report.silent,
        }
    return doc
