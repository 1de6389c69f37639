"""Integer spike codec: adaptive thresholds, count encoding, spike trains.

The pipeline runs in three stages. A threshold is derived from the activation
statistics (mean absolute value over a chosen granularity, divided by k).
Activations then collapse into integer spike counts in a single step,
count = round(x / v_th) with ties away from zero. Counts optionally expand
into per-channel event trains under one of five coding schemes and collapse
back exactly:

* binary        one +1 event per unit of a non-negative count
* ternary       |count| events carrying sign(count)
* bitwise_pure  LSB-first base-2 digits of a non-negative count
* bitwise_bidir non-adjacent signed-digit form, digits in {-1, 0, +1}
* bitwise_twos  two's-complement digits, top bit weighted -2^(bits-1)

An integrate-and-fire simulation is included as the reference oracle for the
single-step collapse: with unit leak, soft reset, and a half-threshold input
bias it emits exactly the rounded count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    NumericError,
    SchemeError,
)

__all__ = [
    "SCHEMES",
    "SpikeCountTensor",
    "SpikeTrain",
    "NeuronParams",
    "adaptive_threshold",
    "encode_counts",
    "encode_activations",
    "if_simulate",
    "expand",
    "collapse",
    "spike_project",
    "spike_project_expanded",
    "symmetric_remap",
]

SCHEMES = ("binary", "ternary", "bitwise_pure", "bitwise_bidir", "bitwise_twos")
_BITWISE = ("bitwise_pure", "bitwise_bidir", "bitwise_twos")

ZERO_INPUT_EPSILON = 1e-6


@dataclass
class SpikeCountTensor:
    """Integer spike counts plus the threshold that produced them.

    counts has the source activation's shape; v_th broadcasts against it.
    k_param records the threshold divisor used, when known.
    """

    counts: np.ndarray
    v_th: np.ndarray
    k_param: float = 1.0

    def reconstruct(self) -> np.ndarray:
        """Quantized reconstruction v_th * counts of the source activation."""
        return (self.v_th * self.counts).astype(np.float32)


@dataclass
class SpikeTrain:
    """Per-channel event sequences for one coding scheme.

    events is int8 [channels, timesteps] with values in {-1, 0, 1}; channels
    iterate over the flattened count tensor whose shape is kept for collapse.
    bits is set for the bitwise schemes and None otherwise.
    """

    scheme: str
    timesteps: int
    events: np.ndarray
    shape: tuple
    bits: int | None = None


@dataclass(frozen=True)
class NeuronParams:
    """Leaky integrate-and-fire settings for the simulation oracle.

    decay is the membrane leak multiplier in (0, 1]; 1 turns the LIF neuron
    into the plain IF form. v_th_fixed overrides the call-site threshold when
    set. Hard reset clears the membrane to zero on a spike; soft reset
    subtracts one threshold and keeps the residue.
    """

    decay: float = 1.0
    v_th_fixed: float | None = None
    reset: str = "soft"

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise DomainError(f"decay must be in (0, 1], got {self.decay}")
        if self.reset not in ("hard", "soft"):
            raise DomainError(f"unknown reset mode {self.reset!r}")
        if self.v_th_fixed is not None and self.v_th_fixed <= 0:
            raise DomainError("fixed threshold must be positive")


# --------------------------------------------------------------------------- #
# Thresholds and counts
# --------------------------------------------------------------------------- #
def adaptive_threshold(x: np.ndarray, k: float, granularity: str = "per_token") -> np.ndarray:
    """Threshold mean(|x|) / k over the chosen granularity.

    per_token averages over the last axis of x (one threshold per row, kept
    as a broadcastable trailing axis); per_tensor averages everything into a
    single scalar. Rows (or tensors) of exact zeros get a tiny epsilon
    threshold so the downstream division is defined; their counts are zero.
    """
    if k <= 0:
        raise DomainError(f"k must be positive, got {k}")
    x = np.asarray(x, dtype=np.float32)
    if granularity == "per_tensor":
        mean_abs = np.mean(np.abs(x))
        v = mean_abs / np.float32(k) if mean_abs > 0 else np.float32(ZERO_INPUT_EPSILON)
        return np.float32(v)
    if granularity == "per_token":
        if x.ndim < 1:
            raise DimensionError("per_token thresholds need at least one axis")
        mean_abs = np.mean(np.abs(x), axis=-1, keepdims=True)
        v = mean_abs / np.float32(k)
        return np.where(mean_abs > 0, v, np.float32(ZERO_INPUT_EPSILON)).astype(np.float32)
    raise DomainError(f"unknown granularity {granularity!r}")


def _round_half_away(y: np.ndarray) -> np.ndarray:
    return np.trunc(y + np.copysign(np.float32(0.5), y))


def encode_counts(x: np.ndarray, v_th: np.ndarray, k_param: float = 1.0) -> SpikeCountTensor:
    """Collapse activations into integer counts: round(x / v_th), ties away from zero.

    The reconstruction v_th * counts is always within v_th / 2 of x
    elementwise. Raises on non-finite activations or non-positive thresholds.
    """
    x = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(x)):
        raise NumericError("activations must be finite")
    v_th = np.asarray(v_th, dtype=np.float32)
    if np.any(v_th <= 0):
        raise DomainError("thresholds must be positive")
    counts = _round_half_away(x / v_th).astype(np.int64)
    return SpikeCountTensor(counts, v_th, k_param)


def encode_activations(x: np.ndarray, k: float = 1.0, granularity: str = "per_token") -> SpikeCountTensor:
    """adaptive_threshold followed by encode_counts, keeping k on the result."""
    v_th = adaptive_threshold(x, k, granularity)
    return encode_counts(x, v_th, k_param=k)


def if_simulate(x: float, v_th: float, T: int, params: NeuronParams = NeuronParams()) -> int:
    """Simulate an integrate-and-fire neuron and return its total spike count.

    The input is delivered once as x + v_th/2 (the half-threshold bias that
    makes threshold crossing realize rounding rather than flooring) and zero
    afterwards. Each step spikes when the membrane reaches the threshold;
    soft reset subtracts the threshold, hard reset clears the membrane. With
    decay 1, soft reset, and T at least the count, the result equals
    encode_counts for non-negative x. Arithmetic is float32 to mirror the
    encoder exactly.
    """
    if T < 1:
        raise DomainError(f"need at least one step, got T={T}")
    threshold = np.float32(params.v_th_fixed if params.v_th_fixed is not None else v_th)
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    decay = np.float32(params.decay)
    v = np.float32(x) + threshold / np.float32(2.0)
    spikes = 0
    for _ in range(T):
        fired = v >= threshold
        if fired:
            spikes += 1
        if params.reset == "soft":
            v = decay * v - (threshold if fired else np.float32(0.0))
        else:
            v = np.float32(0.0) if fired else decay * v
    return spikes


# --------------------------------------------------------------------------- #
# Train expansion and collapse
# --------------------------------------------------------------------------- #
def _as_counts_array(counts) -> np.ndarray:
    if isinstance(counts, SpikeCountTensor):
        counts = counts.counts
    counts = np.asarray(counts)
    if not np.issubdtype(counts.dtype, np.integer):
        raise DomainError("expand needs integer counts; run encode_counts first")
    return counts.astype(np.int64)


def _naf_digits(flat: np.ndarray, bits: int) -> np.ndarray:
    """Non-adjacent signed-digit recoding, LSB first, one column per weight 2^j."""
    n = flat.copy()
    digits = np.zeros((flat.size, bits), dtype=np.int8)
    for j in range(bits):
        odd = (n & 1) != 0
        d = np.where(odd, 2 - (n % 4), 0)
        digits[:, j] = d
        n = (n - d) >> 1
    if np.any(n != 0):
        raise SchemeError(f"count magnitude too large for {bits} signed digits")
    return digits


def expand(counts, scheme: str, bits: int | None = None) -> SpikeTrain:
    """Expand integer counts into a per-channel spike train.

    binary and ternary trains are as long as the largest (absolute) count in
    the tensor; bitwise trains are exactly `bits` steps and raise SchemeError
    when any count does not fit the declared width.
    """
    flat_src = _as_counts_array(counts)
    shape = flat_src.shape
    flat = flat_src.reshape(-1)

    if scheme == "binary":
        if np.any(flat < 0):
            raise SchemeError("binary coding cannot represent negative counts")
        timesteps = int(flat.max()) if flat.size else 0
        events = (np.arange(timesteps)[None, :] < flat[:, None]).astype(np.int8)
        return SpikeTrain(scheme, timesteps, events, shape)

    if scheme == "ternary":
        mags = np.abs(flat)
        timesteps = int(mags.max()) if flat.size else 0
        active = np.arange(timesteps)[None, :] < mags[:, None]
        events = (active * np.sign(flat)[:, None]).astype(np.int8)
        return SpikeTrain(scheme, timesteps, events, shape)

    if scheme in _BITWISE:
        if bits is None or bits < 1:
            raise SchemeError(f"{scheme} needs an explicit positive bit width")
        if scheme == "bitwise_pure":
            if np.any(flat < 0):
                raise SchemeError("bitwise_pure cannot represent negative counts")
            if np.any(flat > (1 << bits) - 1):
                raise SchemeError(f"count exceeds the {bits}-bit unsigned range")
            shifts = np.arange(bits, dtype=np.int64)
            events = ((flat[:, None] >> shifts) & 1).astype(np.int8)
        elif scheme == "bitwise_twos":
            lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
            if np.any(flat < lo) or np.any(flat > hi):
                raise SchemeError(f"count outside the {bits}-bit two's-complement range")
            unsigned = np.mod(flat, 1 << bits)
            shifts = np.arange(bits, dtype=np.int64)
            events = ((unsigned[:, None] >> shifts) & 1).astype(np.int8)
        else:  # bitwise_bidir
            events = _naf_digits(flat, bits)
        return SpikeTrain(scheme, bits, events, shape, bits=bits)

    raise SchemeError(f"unknown coding scheme {scheme!r}")


def _validate_events(train: SpikeTrain, allowed: tuple) -> np.ndarray:
    events = np.asarray(train.events)
    if not np.isin(events, allowed).all():
        raise SchemeError(f"{train.scheme} train contains events outside {allowed}")
    return events.astype(np.int64)


def collapse(train: SpikeTrain) -> np.ndarray:
    """Decode a spike train back to its integer counts, exactly.

    binary/ternary trains sum their events; bitwise trains weight step t by
    2^t, with the final two's-complement step carrying -2^(bits-1).
    """
    if train.scheme == "binary":
        events = _validate_events(train, (0, 1))
        counts = events.sum(axis=1)
    elif train.scheme == "ternary":
        events = _validate_events(train, (-1, 0, 1))
        counts = events.sum(axis=1)
    elif train.scheme == "bitwise_pure":
        events = _validate_events(train, (0, 1))
        counts = events @ (1 << np.arange(train.timesteps, dtype=np.int64))
    elif train.scheme == "bitwise_bidir":
        events = _validate_events(train, (-1, 0, 1))
        counts = events @ (1 << np.arange(train.timesteps, dtype=np.int64))
    elif train.scheme == "bitwise_twos":
        events = _validate_events(train, (0, 1))
        weights = 1 << np.arange(train.timesteps, dtype=np.int64)
        weights[-1] = -weights[-1]
        counts = events @ weights
    else:
        raise SchemeError(f"unknown coding scheme {train.scheme!r}")
    return counts.reshape(train.shape)


def symmetric_remap(counts: np.ndarray) -> tuple[np.ndarray, int]:
    """Center a count distribution around zero; returns (remapped, offset).

    Maps an observed range [lo, hi] onto [lo - offset, hi - offset] with
    offset = floor((lo + hi) / 2), so a non-negative distribution over
    [0, 2m] lands on [-m, m] and its ternary train bound halves. Undo by
    adding the offset back before any reconstruction.
    """
    counts = _as_counts_array(counts)
    if counts.size == 0:
        return counts, 0
    offset = int((int(counts.min()) + int(counts.max())) // 2)
    return counts - offset, offset


# --------------------------------------------------------------------------- #
# Spike-driven projection
# --------------------------------------------------------------------------- #
def _project(w: np.ndarray, sct: SpikeCountTensor, integer_counts: np.ndarray) -> np.ndarray:
    w64 = np.asarray(w, dtype=np.float64)
    if integer_counts.shape[-1] != w64.shape[1]:
        raise DimensionError(
            f"projection expects counts over {w64.shape[1]} inputs, got {integer_counts.shape[-1]}"
        )
    y = integer_counts @ w64.T
    v = np.asarray(sct.v_th, dtype=np.float64)
    if v.ndim >= 1 and v.shape[-1] != 1:
        raise DimensionError(
            "projection thresholds must be scalar or per-token (trailing axis of 1)"
        )
    return (y * v).astype(np.float32)


def spike_project(w: np.ndarray, sct: SpikeCountTensor) -> np.ndarray:
    """Single-step spike projection: y = v_th * (counts @ w^T).

    w is [d_out, d_in]; counts are [d_in] or [tokens, d_in] with a per-token
    or scalar threshold. The integer matmul happens before the threshold
    scale, so the integer part is exact.
    """
    return _project(w, sct, sct.counts.astype(np.int64))


def spike_project_expanded(w: np.ndarray, sct: SpikeCountTensor, train: SpikeTrain) -> np.ndarray:
    """Time-expanded projection: accumulate events step by step, then project.

    The per-step events are folded into an integer accumulator (the
    event-driven path: at each step only active channels contribute), which
    must reproduce the collapsed counts bit-exactly; the shared projection
    and threshold scale then make the two paths identical by construction.
    """
    acc = np.zeros(train.events.shape[0], dtype=np.int64)
    for t in range(train.timesteps):
        step = train.events[:, t].astype(np.int64)
        if train.scheme == "bitwise_twos" and t == train.timesteps - 1:
            acc += step * -(1 << t)
        elif train.scheme in _BITWISE:
            acc += step * (1 << t)
        else:
            acc += step
    return _project(w, sct, acc.reshape(train.shape))
