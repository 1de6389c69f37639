"""Attention kernels: causal softmax, sliding-window, linear, and gated-linear forms.

All full-sequence kernels take q/k/v of shape [heads, seq, d] in float32 and
return [heads, seq, d_v]. Single-step kernels take [heads, d] rows and carry a
RecurrentState. Numerical conventions:

* no 1/sqrt(d_k) inside the kernels; callers scale q if they want scaling,
* softmax masking uses explicit boolean masks built by the helpers below,
* the gated recurrence decays first, writes second, reads third:
  S_t = diag(g_t) S_{t-1} + k_t^T v_t, then o_t = q_t S_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, EmptyInputError, WindowError

__all__ = [
    "RecurrentState",
    "AttentionMap",
    "causal_mask",
    "sink_causal_mask",
    "window_mask",
    "masked_softmax",
    "softmax_attention",
    "swa",
    "linear_attention_parallel",
    "linear_attention_recurrent",
    "gla_recurrent",
    "gla_full_recurrent",
    "gla_chunkwise",
    "key_tied_gate",
    "attention_map",
]

# Query rows are processed in blocks above this length so the softmax path
# never materializes a full seq x seq score matrix at benchmark sizes.
_BLOCK_ROWS = 512


@dataclass
class RecurrentState:
    """Running state of a linear-attention head group.

    state holds the d_k x d_v accumulator per head. normalizer optionally
    tracks the running key sum for the sum-normalized output variant; it is
    updated whenever present and ignored otherwise.
    """

    state: np.ndarray  # [heads, d_k, d_v]
    normalizer: np.ndarray | None = None  # [heads, d_k]

    @classmethod
    def zeros(cls, heads: int, d_k: int, d_v: int, with_normalizer: bool = False):
        norm = np.zeros((heads, d_k), dtype=np.float32) if with_normalizer else None
        return cls(np.zeros((heads, d_k, d_v), dtype=np.float32), norm)

    def nbytes(self) -> int:
        total = self.state.nbytes
        if self.normalizer is not None:
            total += self.normalizer.nbytes
        return total


@dataclass
class AttentionMap:
    """Materialized seq x seq attention weights for one kernel family.

    For kind "softmax" and "windowed" the rows are masked and sum to one, and
    values @ v reproduces the kernel output directly. For kind "linear" the
    map is the raw similarity q k^T without the causal mask, which keeps its
    numerical rank at or below d_k; apply the causal mask at multiply time
    (tril(values) @ v) to reproduce the parallel-form output.
    """

    values: np.ndarray  # [heads, seq, seq]
    kind: str


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, ...]:
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise DimensionError(
            f"expected [heads, seq, d] inputs, got ranks {q.ndim}/{k.ndim}/{v.ndim}"
        )
    if q.shape[0] != k.shape[0] or q.shape[0] != v.shape[0]:
        raise DimensionError(
            f"head counts differ: q={q.shape[0]} k={k.shape[0]} v={v.shape[0]}"
        )
    if q.shape[1] != k.shape[1] or q.shape[1] != v.shape[1]:
        raise DimensionError(
            f"sequence lengths differ: q={q.shape[1]} k={k.shape[1]} v={v.shape[1]}"
        )
    if q.shape[2] != k.shape[2]:
        raise DimensionError(f"q/k feature sizes differ: {q.shape[2]} vs {k.shape[2]}")
    if q.shape[1] == 0:
        raise EmptyInputError("sequence length is zero")
    if q.shape[0] == 0:
        raise EmptyInputError("head count is zero")
    return q, k, v


def _check_step(q_t, k_t, v_t):
    q_t = np.asarray(q_t, dtype=np.float32)
    k_t = np.asarray(k_t, dtype=np.float32)
    v_t = np.asarray(v_t, dtype=np.float32)
    if q_t.ndim != 2 or k_t.ndim != 2 or v_t.ndim != 2:
        raise DimensionError("step inputs must be [heads, d] rows")
    if q_t.shape != k_t.shape:
        raise DimensionError(f"q/k step shapes differ: {q_t.shape} vs {k_t.shape}")
    if v_t.shape[0] != q_t.shape[0]:
        raise DimensionError("head counts differ between q and v step rows")
    return q_t, k_t, v_t


# --------------------------------------------------------------------------- #
# Masks
# --------------------------------------------------------------------------- #
def causal_mask(seq: int) -> np.ndarray:
    """Boolean [seq, seq] mask: position i may read positions 0..i."""
    return np.tril(np.ones((seq, seq), dtype=bool))


def sink_causal_mask(seq: int, sink_count: int) -> np.ndarray:
    """Causal mask with a bidirectional sink prefix.

    The first sink_count rows/columns are sink positions. Sink rows attend to
    every sink and to nothing else; ordinary rows attend to every sink plus
    their causal prefix of ordinary positions.
    """
    if sink_count < 0 or sink_count > seq:
        raise DomainError(f"sink_count {sink_count} outside [0, seq={seq}]")
    mask = causal_mask(seq)
    if sink_count:
        mask[:, :sink_count] = True  # every row sees every sink
        mask[:sink_count, sink_count:] = False  # sink rows see only sinks
    return mask


def window_mask(seq: int, w: int) -> np.ndarray:
    """Boolean [seq, seq] mask where row i covers columns max(0, i-w+1)..i."""
    if w < 1:
        raise WindowError(f"window must be at least 1, got {w}")
    idx = np.arange(seq)
    return (idx[None, :] <= idx[:, None]) & (idx[None, :] > idx[:, None] - w)


# --------------------------------------------------------------------------- #
# Softmax family
# --------------------------------------------------------------------------- #
def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the allowed entries of scores.

    Disallowed entries come out exactly zero. Every row of the mask must keep
    at least one entry, which the mask builders above guarantee.
    """
    neg = np.float32(-np.inf)
    shifted = np.where(mask, scores, neg)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    weights = np.exp(shifted, dtype=np.float32)
    weights = np.where(mask, weights, np.float32(0.0))
    return weights / weights.sum(axis=-1, keepdims=True)


def _attend_blocked(q, k, v, mask_rows):
    """softmax(q k^T masked) @ v, looping over query-row blocks.

    mask_rows(rows) must return the boolean [len(rows), seq] mask slice for
    the given absolute row indices, so no seq x seq mask is ever materialized.
    """
    heads, seq, _ = q.shape
    out = np.empty((heads, seq, v.shape[2]), dtype=np.float32)
    for start in range(0, seq, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, seq)
        scores = q[:, start:stop] @ np.swapaxes(k, 1, 2)  # [h, block, seq]
        probs = masked_softmax(scores, mask_rows(np.arange(start, stop)))
        out[:, start:stop] = probs @ v
    return out


def _causal_rows(seq: int, sink_count: int = 0):
    cols = np.arange(seq)[None, :]

    def rule(rows):
        allowed = cols <= rows[:, None]
        if sink_count:
            allowed |= (rows[:, None] < sink_count) & (cols < sink_count)
            # sink rows must not read ordinary tokens
            allowed &= ~((rows[:, None] < sink_count) & (cols >= sink_count))
        return allowed

    return rule


def _window_rows(seq: int, w: int):
    cols = np.arange(seq)[None, :]

    def rule(rows):
        r = rows[:, None]
        return (cols <= r) & (cols > r - w)

    return rule


def softmax_attention(q, k, v, sink_count: int = 0) -> np.ndarray:
    """Causal softmax attention, optionally with a bidirectional sink prefix.

    Parameters
    ----------
    q, k, v : ndarray, [heads, seq, d]
        Query/key/value rows. When sink_count > 0 the first sink_count
        positions are sink tokens already present in the inputs.
    sink_count : int
        Length of the sink prefix. Sinks are visible to every row; sink rows
        attend only among themselves, without causal masking.

    Returns
    -------
    ndarray, [heads, seq, d_v]
    """
    q, k, v = _check_qkv(q, k, v)
    seq = q.shape[1]
    if sink_count < 0 or sink_count > seq:
        raise DomainError(f"sink_count {sink_count} outside [0, seq={seq}]")
    return _attend_blocked(q, k, v, _causal_rows(seq, sink_count))


def swa(q, k, v, w: int) -> np.ndarray:
    """Sliding-window attention: each position reads its last w positions.

    Shares the masked-softmax kernel with softmax_attention, so a window that
    covers the whole sequence reproduces causal softmax attention exactly.
    """
    q, k, v = _check_qkv(q, k, v)
    if w < 1:
        raise WindowError(f"window must be at least 1, got {w}")
    return _attend_blocked(q, k, v, _window_rows(q.shape[1], w))


# --------------------------------------------------------------------------- #
# Linear family
# --------------------------------------------------------------------------- #
def linear_attention_parallel(q, k, v) -> np.ndarray:
    """Ungated linear attention in parallel form: o = (q k^T masked) @ v."""
    q, k, v = _check_qkv(q, k, v)
    scores = q @ np.swapaxes(k, 1, 2)
    scores *= causal_mask(q.shape[1])
    return (scores @ v).astype(np.float32)


def linear_attention_recurrent(q_t, k_t, v_t, state: RecurrentState):
    """One ungated recurrent step: write k^T v into the state, then read with q.

    Returns (o_t, state) where o_t is [heads, d_v]; the state is updated in
    place and also returned for call-chaining.
    """
    q_t, k_t, v_t = _check_step(q_t, k_t, v_t)
    state.state += np.einsum("hk,hv->hkv", k_t, v_t)
    if state.normalizer is not None:
        state.normalizer += k_t
    o_t = np.einsum("hk,hkv->hv", q_t, state.state)
    return o_t.astype(np.float32), state


def _check_gate(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float32)
    if g.size == 0:
        raise EmptyInputError("gate tensor is empty")
    if np.any(g <= 0.0) or np.any(g >= 1.0):
        raise DomainError("gate values must lie strictly inside (0, 1)")
    return g


def gla_recurrent(q_t, k_t, v_t, g_t, state: RecurrentState):
    """One gated step: S = diag(g) S + k^T v, then o = q S.

    Parameters
    ----------
    q_t, k_t, v_t : ndarray, [heads, d]
        Current rows. k and q share d_k; v has d_v.
    g_t : ndarray, [heads, d_k]
        Per-channel forget gate, strictly inside (0, 1). The gate scales the
        d_k axis of the state before the new outer product is written.
    state : RecurrentState

    Returns
    -------
    (o_t, state) with o_t of shape [heads, d_v].
    """
    q_t, k_t, v_t = _check_step(q_t, k_t, v_t)
    g_t = _check_gate(g_t)
    if g_t.shape != q_t.shape:
        raise DimensionError(f"gate shape {g_t.shape} must match q/k rows {q_t.shape}")
    state.state *= g_t[:, :, None]
    state.state += np.einsum("hk,hv->hkv", k_t, v_t)
    if state.normalizer is not None:
        state.normalizer *= g_t
        state.normalizer += k_t
    o_t = np.einsum("hk,hkv->hv", q_t, state.state)
    return o_t.astype(np.float32), state


def gla_full_recurrent(q, k, v, g) -> np.ndarray:
    """Reference gated scan over a whole sequence, one step at a time.

    Slow but direct; the chunkwise kernel is checked against it.
    """
    q, k, v = _check_qkv(q, k, v)
    g = _check_gate(g)
    heads, seq, d_k = q.shape
    state = RecurrentState.zeros(heads, d_k, v.shape[2])
    out = np.empty((heads, seq, v.shape[2]), dtype=np.float32)
    for t in range(seq):
        out[:, t], state = gla_recurrent(q[:, t], k[:, t], v[:, t], g[:, t], state)
    return out


def gla_chunkwise(
    q, k, v, g, chunk: int = 64, state: RecurrentState | None = None
) -> np.ndarray:
    """Chunkwise-parallel gated linear attention.

    Equivalent to running gla_recurrent over the sequence, but processes the
    sequence in chunks: within a chunk the pairwise decay factors are applied
    directly, between chunks only the per-channel cumulative decay touches the
    carried state. Cumulative decays are handled as log-space sums so long
    runs of small gates underflow to zero instead of dividing by it.

    Parameters
    ----------
    q, k, v : ndarray, [heads, seq, d]
    g : ndarray, [heads, seq, d_k]
        Forget gates strictly inside (0, 1).
    chunk : int
        Chunk length; any positive value gives the same result up to float
        reordering. The final state, when requested via ``state``, is written
        into that object.
    state : RecurrentState, optional
        Starting state; zeros when omitted. Mutated to the final state.

    Returns
    -------
    ndarray, [heads, seq, d_v]
    """
    q, k, v = _check_qkv(q, k, v)
    g = _check_gate(g)
    if g.shape != q.shape[:2] + (q.shape[2],):
        raise DimensionError(f"gate shape {g.shape} must match q {q.shape}")
    if chunk < 1:
        raise DomainError(f"chunk must be positive, got {chunk}")

    heads, seq, d_k = q.shape
    d_v = v.shape[2]
    if state is None:
        state = RecurrentState.zeros(heads, d_k, d_v)
    s = state.state.astype(np.float32)
    out = np.empty((heads, seq, d_v), dtype=np.float32)

    for start in range(0, seq, chunk):
        stop = min(start + chunk, seq)
        qc = q[:, start:stop]  # [h, c, dk]
        kc = k[:, start:stop]
        vc = v[:, start:stop]
        gc = g[:, start:stop]
        c = stop - start

        # Inclusive log-cumulative decay within the chunk, in float64 so the
        # pairwise differences stay accurate for long chunks.
        logb = np.cumsum(np.log(gc.astype(np.float64)), axis=1)  # [h, c, dk]

        b = np.exp(logb).astype(np.float32)
        # Contribution of the carried state: q_i decayed by everything since
        # the chunk began.
        o_inter = np.einsum("hck,hkv->hcv", qc * b, s)

        # Pairwise intra-chunk decay ratios b_i / b_j for i >= j; always <= 1.
        # The upper triangle is masked away below, so clamp its positive
        # log-differences before exponentiating instead of letting them blow up.
        diff = np.minimum(logb[:, :, None, :] - logb[:, None, :, :], 0.0)
        ratio = np.exp(diff)  # [h, i, j, dk]
        scores = np.einsum("hik,hijk,hjk->hij", qc, ratio.astype(np.float32), kc)
        scores *= causal_mask(c)
        o_intra = scores @ vc

        out[:, start:stop] = o_inter + o_intra

        # Fold the chunk into the carried state: decay the old state by the
        # full chunk, add each key scaled by the decay it still suffers.
        tail = np.exp(logb[:, -1:, :] - logb).astype(np.float32)  # b_last / b_j
        s = b[:, -1, :, None] * s + np.einsum("hjk,hjv->hkv", kc * tail, vc)

    state.state = s.astype(np.float32)
    return out


def key_tied_gate(k) -> np.ndarray:
    """Forget gate tied to the key rows: g = 1 - k, with k strictly in (0, 1).

    Keys must already be squashed into (0, 1) (sigmoid activation); the
    complement then lands strictly inside (0, 1) as the gate domain requires.
    """
    k = np.asarray(k, dtype=np.float32)
    if k.size == 0:
        raise EmptyInputError("key tensor is empty")
    if np.any(k <= 0.0) or np.any(k >= 1.0):
        raise DomainError("key-tied gate needs keys strictly inside (0, 1)")
    return (np.float32(1.0) - k).astype(np.float32)


# --------------------------------------------------------------------------- #
# Attention maps
# --------------------------------------------------------------------------- #
def attention_map(q, k, kind: str, w: int | None = None, sink_count: int = 0) -> AttentionMap:
    """Materialize the seq x seq attention weights for a kernel family.

    kind "softmax" and "windowed" return masked row-stochastic maps whose
    product with v reproduces the kernel output. kind "linear" returns the
    raw similarity q k^T, whose numerical rank never exceeds d_k; the causal
    mask belongs to the multiply, not the map, for that family.
    """
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    dummy_v = np.zeros((q.shape[0], q.shape[1], 1), dtype=np.float32) if q.ndim == 3 else None
    if dummy_v is None:
        raise DimensionError("attention_map expects [heads, seq, d_k] inputs")
    _check_qkv(q, k, dummy_v)
    seq = q.shape[1]
    scores = q @ np.swapaxes(k, 1, 2)

    if kind == "softmax":
        mask = sink_causal_mask(seq, sink_count) if sink_count else causal_mask(seq)
        return AttentionMap(masked_softmax(scores, mask), kind)
    if kind == "windowed":
        if w is None:
            raise WindowError("windowed maps need a window size")
        return AttentionMap(masked_softmax(scores, window_mask(seq, w)), kind)
    if kind == "linear":
        return AttentionMap(scores.astype(np.float32), kind)
    raise DomainError(f"unknown attention map kind: {kind!r}")
