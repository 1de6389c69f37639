"""Hybrid block composition: layer specs, depth layouts, and the pre-norm skeleton.

A block wraps attention branches in the usual pre-RMS-norm + residual
structure. Two composition forms are provided: sequential (different
attention kinds stacked across layers) and parallel (two branches reading the
same normalized input, each branch RMS-normalized before a weighted merge).

Layouts come in two families. "7B-like" interleaves linear-attention and
sliding-window layers 1:1 with dense FFNs everywhere. "76B-like" runs
parallel linear+sliding-window layers, switches the second branch to full
attention on every seventh layer, and places dense FFNs on a fixed small set
of early layers with mixture-of-experts FFNs elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import gla_chunkwise, key_tied_gate, softmax_attention, swa
from .errors import DimensionError, DomainError, WindowError
from .mathutil import rms_norm, sigmoid

__all__ = [
    "ATTENTION_KINDS",
    "LayerSpec",
    "MergeWeights",
    "BranchParams",
    "rope",
    "attention_branch",
    "sequential_block",
    "parallel_block",
    "split_parallel",
    "build_layout",
]

ATTENTION_KINDS = ("fa", "swa", "la", "la+swa", "la+fa")
_SINGLE_KINDS = ("fa", "swa", "la")

# Reference positions of the dense FFN layers in the 28-layer parallel
# layout; other depths use the scaled analogue.
_DENSE_REFERENCE = (1, 2, 3, 5, 7, 9, 11)
_DENSE_REFERENCE_DEPTH = 28
_FA_EVERY = 7


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer's attention and FFN choice.

    attention is one of "fa", "swa", "la", "la+swa", "la+fa". window must be
    present exactly when the spec includes a sliding-window branch, and
    sink_count may be positive only when a full-attention branch exists.
    """

    attention: str
    window: int | None = None
    ffn: str = "dense"
    sink_count: int = 0

    def __post_init__(self):
        if self.attention not in ATTENTION_KINDS:
            raise DomainError(f"unknown attention kind {self.attention!r}")
        has_swa = "swa" in self.attention
        if has_swa and (self.window is None or self.window < 1):
            raise WindowError(f"attention {self.attention!r} needs a positive window")
        if not has_swa and self.window is not None:
            raise WindowError(f"attention {self.attention!r} must not carry a window")
        if self.ffn not in ("dense", "moe"):
            raise DomainError(f"unknown ffn kind {self.ffn!r}")
        if self.sink_count < 0:
            raise DomainError("sink_count must be non-negative")
        if self.sink_count > 0 and "fa" not in self.attention:
            raise DomainError("sink tokens only apply to full-attention branches")

    def to_dict(self) -> dict:
        return {
            "attention": self.attention,
            "window": self.window,
            "ffn": self.ffn,
            "sink_count": self.sink_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            attention=d["attention"],
            window=d.get("window"),
            ffn=d.get("ffn", "dense"),
            sink_count=d.get("sink_count", 0),
        )


@dataclass(frozen=True)
class MergeWeights:
    """Scalar weights for merging the two branches of a parallel block."""

    w1: float = 0.5
    w2: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.w1) and math.isfinite(self.w2)):
            raise DomainError("merge weights must be finite")


@dataclass
class BranchParams:
    """Projection weights for one attention branch.

    All projections are [d_model, d_model], applied as x @ w. gate_a/gate_b
    hold the low-rank forget-gate projection for gated linear attention; when
    absent, a linear branch falls back to the key-tied gate g = 1 - k.
    sink_embed holds learned sink token inputs for full-attention branches.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    gate_a: np.ndarray | None = None  # [d_model, rank]
    gate_b: np.ndarray | None = None  # [rank, d_model]
    sink_embed: np.ndarray | None = None  # [sink_count, d_model]


def rope(x: np.ndarray, positions: np.ndarray, base: float = 10000.0) -> np.ndarray:
    """Rotary position embedding over the last axis (rotate-half convention).

    x is [heads, n, d] with d even; positions is the length-n vector of
    absolute positions.
    """
    d = x.shape[-1]
    if d % 2:
        raise DimensionError(f"rotary embedding needs an even feature size, got {d}")
    half = d // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.cos(angles).astype(np.float32)  # [n, half]
    sin = np.sin(angles).astype(np.float32)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _split_heads(m: np.ndarray, heads: int) -> np.ndarray:
    n, d_model = m.shape
    return np.ascontiguousarray(m.reshape(n, heads, d_model // heads).transpose(1, 0, 2))


def _merge_heads(m: np.ndarray) -> np.ndarray:
    heads, n, d_head = m.shape
    return np.ascontiguousarray(m.transpose(1, 0, 2)).reshape(n, heads * d_head)


def _la_gate(x, k_sig, params, heads):
    if params.gate_a is not None and params.gate_b is not None:
        return _split_heads(sigmoid(x @ params.gate_a @ params.gate_b), heads)
    return key_tied_gate(k_sig)


def attention_branch(
    x: np.ndarray,
    kind: str,
    params: BranchParams,
    heads: int,
    *,
    window: int | None = None,
    sink_count: int = 0,
    pos_offset: int = 0,
    la_norm: str = "rms",
    rope_base: float = 10000.0,
    chunk: int = 64,
) -> np.ndarray:
    """Run one attention branch over a full, already pre-normalized sequence.

    Conventions: linear branches squash q and k through a sigmoid (keeping
    the recurrent state non-negative-feature based) and carry no positional
    rotation; softmax branches scale q by 1/sqrt(d_head) and rotate q/k with
    rotary embeddings at absolute positions pos_offset + 0..n-1 (shifted past
    the sink prefix when one exists).

    Returns the branch output [n, d_model] after the output projection; the
    caller owns residuals and branch normalization.
    """
    if kind not in _SINGLE_KINDS:
        raise DomainError(f"attention branches take single kinds, got {kind!r}")
    n, d_model = x.shape
    d_head = d_model // heads
    q = _split_heads(x @ params.wq, heads)
    k = _split_heads(x @ params.wk, heads)
    v = _split_heads(x @ params.wv, heads)

    if kind == "la":
        q = sigmoid(q)
        k = sigmoid(k)
        g = _la_gate(x, k, params, heads)
        if la_norm == "sum":
            ones = np.ones((heads, n, 1), dtype=np.float32)
            o_aug = gla_chunkwise(q, k, np.concatenate([v, ones], axis=-1), g, chunk=chunk)
            o = o_aug[..., :-1] / (o_aug[..., -1:] + np.float32(1e-6))
        else:
            o = gla_chunkwise(q, k, v, g, chunk=chunk)
            if la_norm == "rms":
                o = rms_norm(o)
            elif la_norm != "none":
                raise DomainError(f"unknown linear-attention normalization {la_norm!r}")
    else:
        q = q * np.float32(1.0 / math.sqrt(d_head))
        if kind == "fa" and sink_count:
            if params.sink_embed is None or params.sink_embed.shape[0] != sink_count:
                raise DimensionError("sink_count does not match the branch sink embeddings")
            s = params.sink_embed
            q_s = _split_heads(s @ params.wq, heads) * np.float32(1.0 / math.sqrt(d_head))
            k_s = _split_heads(s @ params.wk, heads)
            v_s = _split_heads(s @ params.wv, heads)
            tok_pos = sink_count + pos_offset + np.arange(n)
            q = np.concatenate([rope(q_s, np.arange(sink_count), rope_base), rope(q, tok_pos, rope_base)], axis=1)
            k = np.concatenate([rope(k_s, np.arange(sink_count), rope_base), rope(k, tok_pos, rope_base)], axis=1)
            v = np.concatenate([v_s, v], axis=1)
            o = softmax_attention(q, k, v, sink_count=sink_count)[:, sink_count:]
        else:
            positions = pos_offset + np.arange(n)
            q = rope(q, positions, rope_base)
            k = rope(k, positions, rope_base)
            o = softmax_attention(q, k, v) if kind == "fa" else swa(q, k, v, window)

    return (_merge_heads(o) @ params.wo).astype(np.float32)


def sequential_block(
    x: np.ndarray,
    spec1: LayerSpec,
    spec2: LayerSpec,
    params: tuple[BranchParams, BranchParams],
    heads: int,
    **branch_kw,
) -> np.ndarray:
    """Two attention sublayers stacked, each wrapped in pre-norm + residual."""
    for spec, p in zip((spec1, spec2), params):
        if spec.attention not in _SINGLE_KINDS:
            raise DomainError("sequential blocks stack single attention kinds")
        x = x + attention_branch(
            rms_norm(x),
            spec.attention,
            p,
            heads,
            window=spec.window,
            sink_count=spec.sink_count,
            **branch_kw,
        )
    return x.astype(np.float32)


def parallel_block(
    x: np.ndarray,
    branch1: LayerSpec,
    branch2: LayerSpec,
    mw: MergeWeights,
    params: tuple[BranchParams, BranchParams],
    heads: int,
    **branch_kw,
) -> np.ndarray:
    """Two branches over one normalized input, per-branch RMS norm, weighted merge.

    The residual path is always present: zero merge weights return x
    unchanged, and the output is linear in (w1, w2) for fixed branch outputs.
    """
    xn = rms_norm(x)
    outs = []
    for spec, p in zip((branch1, branch2), params):
        if spec.attention not in _SINGLE_KINDS:
            raise DomainError("parallel branches take single attention kinds")
        outs.append(
            attention_branch(
                xn,
                spec.attention,
                p,
                heads,
                window=spec.window,
                sink_count=spec.sink_count,
                **branch_kw,
            )
        )
    merged = np.float32(mw.w1) * rms_norm(outs[0]) + np.float32(mw.w2) * rms_norm(outs[1])
    return (x + merged).astype(np.float32)


def split_parallel(spec: LayerSpec) -> tuple[LayerSpec, LayerSpec]:
    """Break a parallel layer spec into its two single-kind branch specs."""
    if spec.attention == "la+swa":
        return (
            LayerSpec("la", ffn=spec.ffn),
            LayerSpec("swa", window=spec.window, ffn=spec.ffn),
        )
    if spec.attention == "la+fa":
        return (
            LayerSpec("la", ffn=spec.ffn),
            LayerSpec("fa", ffn=spec.ffn, sink_count=spec.sink_count),
        )
    raise DomainError(f"{spec.attention!r} is not a parallel attention kind")


def _scaled_positions(reference: tuple[int, ...], depth: int, ref_depth: int) -> set[int]:
    return {min(depth, max(1, round(i * depth / ref_depth))) for i in reference}


def build_layout(
    model_kind: str,
    depth: int,
    overrides: dict[int, LayerSpec] | None = None,
    *,
    window: int = 8,
    sink_count: int = 4,
) -> list[LayerSpec]:
    """Generate the per-layer specs for one of the two layout families.

    Parameters
    ----------
    model_kind : {"7B-like", "76B-like"}
        "7B-like" alternates la/swa starting with la, all layers dense.
        "76B-like" uses la+swa everywhere except la+fa on every seventh
        layer (scaled to ceil(depth/7) evenly spaced placements when depth is
        not a multiple of 7); dense FFNs sit at the scaled analogue of the
        reference layer set [1,2,3,5,7,9,11], MoE everywhere else.
    depth : int
        Number of layers, at least 2.
    overrides : dict, optional
        1-based layer index -> replacement LayerSpec, applied last.
    window : int
        Sliding-window size for swa branches (desk-scale default 8).
    sink_count : int
        Sink prefix length for full-attention branches in the parallel family.
    """
    if depth < 2:
        raise DomainError(f"depth must be at least 2, got {depth}")
    specs: list[LayerSpec] = []
    if model_kind == "7B-like":
        for i in range(1, depth + 1):
            if i % 2 == 1:
                specs.append(LayerSpec("la"))
            else:
                specs.append(LayerSpec("swa", window=window))
    elif model_kind == "76B-like":
        placements = max(1, math.ceil(depth / _FA_EVERY))
        fa_layers = {min(depth, max(1, round(j * depth / placements))) for j in range(1, placements + 1)}
        dense_layers = _scaled_positions(_DENSE_REFERENCE, depth, _DENSE_REFERENCE_DEPTH)
        for i in range(1, depth + 1):
            ffn = "dense" if i in dense_layers else "moe"
            if i in fa_layers:
                specs.append(LayerSpec("la+fa", ffn=ffn, sink_count=sink_count))
            else:
                specs.append(LayerSpec("la+swa", window=window, ffn=ffn))
    else:
        raise DomainError(f"unknown model kind {model_kind!r}")

    if overrides:
        for idx, spec in overrides.items():
            if not 1 <= idx <= depth:
                raise DomainError(f"override index {idx} outside 1..{depth}")
            specs[idx - 1] = spec
    return specs
