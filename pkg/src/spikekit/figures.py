"""Figure rendering for CLI report paths.

Kept separate from the analysis module so the statistics stay import-light;
only the CLI pulls this in. All writers render straight to a file with the
Agg backend and never open a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = [
    "save_raster_figure",
    "save_histogram_figure",
    "save_scaling_figure",
]


def save_raster_figure(rows, path, title: str = "spike raster") -> None:
    """Scatter (time, neuron) events; positive and negative spikes colored apart.

    `rows` are (time, neuron, value) triples as produced by raster export.
    An empty row list still yields a valid, empty figure.
    """
    fig, ax = plt.subplots(figsize=(8.0, 4.0))
    pos = [(t, n) for t, n, v in rows if v > 0]
    neg = [(t, n) for t, n, v in rows if v < 0]
    if pos:
        ax.scatter(*zip(*pos), marker="|", s=40, color="tab:blue", label="+1")
    if neg:
        ax.scatter(*zip(*neg), marker="|", s=40, color="tab:red", label="-1")
    if pos or neg:
        ax.legend(loc="upper right", frameon=False)
    ax.set_xlabel("time step")
    ax.set_ylabel("neuron")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_histogram_figure(histogram: dict, path, title: str = "spike count distribution") -> None:
    """Bar chart of |count| frequencies on a log count axis when it helps."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if histogram:
        keys = sorted(int(k) for k in histogram)
        vals = [histogram[k] if k in histogram else histogram[str(k)] for k in keys]
        ax.bar(keys, vals, color="tab:blue", width=0.8)
        if max(vals) > 50 * max(1, min(v for v in vals if v > 0)):
            ax.set_yscale("log")
    ax.set_xlabel("|spike count|")
    ax.set_ylabel("frequency")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_scaling_figure(lengths, seconds, exponent: float, path) -> None:
    """Log-log prefill time against prompt length with the fitted slope."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    times = [seconds[n] for n in lengths]
    ax.loglog(lengths, times, "o-", color="tab:blue", label="measured")
    anchor = times[0]
    fit = [anchor * (n / lengths[0]) ** exponent for n in lengths]
    ax.loglog(lengths, fit, "--", color="tab:gray", label=f"slope {exponent:.2f}")
    ax.set_xlabel("prompt length")
    ax.set_ylabel("prefill seconds")
    ax.set_title("prefill scaling")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
