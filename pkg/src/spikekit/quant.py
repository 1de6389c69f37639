"""Symmetric INT8 weight quantization and the W8 x spike projection path.

Weights are quantized per output channel: each row of a projection matrix
gets its own scale, chosen so the largest-magnitude entry lands exactly on
127. Combined with spike-count activations this makes the whole matmul an
integer computation; the float scales are applied once at the end.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, EmptyInputError, NumericError
from .spikes import (
    ZERO_INPUT_EPSILON,
    SpikeCountTensor,
    _round_half_away,
    encode_activations,
)

__all__ = [
    "QuantizedMatrix",
    "quantize_weights",
    "calibrate_k",
    "w8_spike_project",
]

_QMAX = 127


@dataclass
class QuantizedMatrix:
    """An int8 matrix plus one positive scale per output row."""

    q: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        if self.q.ndim != 2:
            raise DimensionError("quantized matrix must be 2-D")
        if self.q.dtype != np.int8:
            raise DomainError("quantized payload must be int8")
        if self.scale.shape != (self.q.shape[0],):
            raise DimensionError("need exactly one scale per output row")
        if not np.all(self.scale > 0):
            raise DomainError("scales must be positive")

    def dequantize(self) -> np.ndarray:
        return (self.scale[:, None] * self.q).astype(np.float32)


def quantize_weights(w: np.ndarray) -> QuantizedMatrix:
    """Quantize a [d_out, d_in] weight matrix to int8, row by row.

    scale = max|row| / 127 so the extreme entries map to exactly +-127.
    An all-zero row gets an epsilon scale and a zero row of codes.
    """
    w = np.asarray(w)
    if w.ndim != 2:
        raise DimensionError("expected a 2-D weight matrix")
    if not np.all(np.isfinite(w)):
        raise NumericError("weights contain non-finite values")
    peak = np.max(np.abs(w), axis=1)
    scale = np.where(peak > 0, peak / _QMAX, ZERO_INPUT_EPSILON).astype(np.float32)
    codes = _round_half_away(w.astype(np.float64) / scale[:, None].astype(np.float64))
    codes = np.clip(codes, -_QMAX, _QMAX)
    return QuantizedMatrix(q=codes.astype(np.int8), scale=scale)


def calibrate_k(samples, k_grid, granularity: str = "per_token") -> float:
    """Pick the threshold divisor with the lowest reconstruction MSE.

    Every candidate in the grid is evaluated over all samples; ties go to
    the larger k, i.e. the finer quantization.
    """
    samples = list(samples)
    k_grid = list(k_grid)
    if not samples:
        raise EmptyInputError("need at least one calibration sample")
    if not k_grid:
        raise EmptyInputError("need at least one candidate k")
    best_k = None
    best_mse = None
    for k in sorted(float(k) for k in k_grid):
        if k <= 0:
            raise DomainError("candidate k values must be positive")
        total = 0.0
        count = 0
        for x in samples:
            x = np.asarray(x, dtype=np.float32)
            sct = encode_activations(x, k=k, granularity=granularity)
            err = x.astype(np.float64) - sct.reconstruct().astype(np.float64)
            total += float(np.sum(err * err))
            count += err.size
        mse = total / count
        if best_mse is None or mse <= best_mse:
            best_k, best_mse = k, mse
    return best_k


def w8_spike_project(wq: QuantizedMatrix, sct: SpikeCountTensor) -> np.ndarray:
    """Project spike counts through an int8 matrix, integer part exact.

    y = (scale x v_th) * (q @ counts) where the matmul runs in int64 and
    only the final rescale touches floats.
    """
    counts = sct.counts
    if counts.shape[-1] != wq.q.shape[1]:
        raise DimensionError(
            f"counts have {counts.shape[-1]} channels, matrix expects {wq.q.shape[1]}"
        )
    peak = int(np.max(np.abs(counts))) if counts.size else 0
    if peak * _QMAX * wq.q.shape[1] > np.iinfo(np.int64).max:
        raise NumericError("integer accumulation would overflow 64 bits")
    acc = counts.astype(np.int64) @ wq.q.astype(np.int64).T
    v = np.asarray(sct.v_th, dtype=np.float64)
    if v.ndim >= 1 and v.shape[-1] != 1:
        raise DimensionError(
            "projection thresholds must be scalar or per-token (trailing axis of 1)"
        )
    y = wq.scale.astype(np.float64) * v * acc.astype(np.float64)
    return y.astype(np.float32)
