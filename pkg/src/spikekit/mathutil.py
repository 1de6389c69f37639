"""Small numeric helpers shared by the block, expert, and runtime modules."""

from __future__ import annotations

import numpy as np

__all__ = ["sigmoid", "softmax", "rms_norm"]


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, float32 out."""
    x = np.asarray(x, dtype=np.float32)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stabilized softmax along one axis."""
    x = np.asarray(x, dtype=np.float32)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def rms_norm(x: np.ndarray, weight: np.ndarray | None = None, eps: float = 1e-6) -> np.ndarray:
    """Root-mean-square normalization over the last axis.

    Scale-free when weight is None; otherwise the normalized rows are
    multiplied elementwise by weight (the usual learned gain).
    """
    x = np.asarray(x, dtype=np.float32)
    scale = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + np.float32(eps))
    out = x / scale
    if weight is not None:
        out = out * weight
    return out.astype(np.float32)
