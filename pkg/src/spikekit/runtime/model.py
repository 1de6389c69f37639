"""Model assembly plus the prefill and decode paths with per-layer caches.

A model is an embedding table, a stack of layers (attention branches and an
FFN, each wrapped in pre-RMS-norm + residual), and an output head. Prefill
runs the parallel kernels over the whole prompt and leaves behind one cache
per layer: a recurrent state for linear branches, a rolling window of rotated
keys/values for sliding-window branches, and the full growing list for
softmax branches. decode_step advances one token against those caches.

Spike mode swaps every dense projection for the integer path: the input is
spike-count encoded, the weight is int8-quantized per output channel, and the
product runs through the exact integer matmul. Router logits stay float so
expert choice is not perturbed by coding noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..attention import RecurrentState, gla_chunkwise, gla_recurrent, key_tied_gate, masked_softmax, softmax_attention, swa
from ..blocks import BranchParams, LayerSpec, MergeWeights, rope, split_parallel
from ..errors import DimensionError, DomainError, EmptyInputError
from ..mathutil import rms_norm, sigmoid
from ..moe import DenseFFN, MoELayer, ffn_forward, moe_forward, route
from ..quant import quantize_weights, w8_spike_project
from ..spikes import encode_activations
from .config import ModelConfig, SpikeSettings

__all__ = [
    "LayerParams",
    "Model",
    "BranchCache",
    "LayerCache",
    "SessionCache",
    "build_model",
    "prefill",
    "decode_step",
    "greedy_generate",
]

INIT_STD = 0.02
GLA_CHUNK = 64


def _gate_rank(d_model: int) -> int:
    return max(2, d_model // 16)


def _split_heads(m: np.ndarray, heads: int) -> np.ndarray:
    n, d_model = m.shape
    return np.ascontiguousarray(m.reshape(n, heads, d_model // heads).transpose(1, 0, 2))


def _merge_heads(m: np.ndarray) -> np.ndarray:
    heads, n, d_head = m.shape
    return np.ascontiguousarray(m.transpose(1, 0, 2)).reshape(n, heads * d_head)


@dataclass
class LayerParams:
    """Weights of one layer: one or two attention branches plus an FFN."""

    spec: LayerSpec
    branches: list
    merge: MergeWeights | None
    ffn: object  # DenseFFN or MoELayer


@dataclass
class Model:
    config: ModelConfig
    embedding: np.ndarray  # [vocab, d_model]
    layers: list
    head: np.ndarray  # [vocab, d_model]
    quant_cache: dict = field(default_factory=dict, repr=False)


# --------------------------------------------------------------------------- #
# Caches
# --------------------------------------------------------------------------- #
@dataclass
class BranchCache:
    """Decode-time memory of one attention branch.

    Linear branches keep a fixed-size recurrent state. Softmax branches keep
    rotated keys and values: capped at `window` entries for sliding-window
    attention, growing without bound (sink prefix included) for full
    attention.
    """

    kind: str
    state: RecurrentState | None = None
    keys: np.ndarray | None = None  # [heads, m, d_head]
    values: np.ndarray | None = None
    window: int | None = None
    sink_count: int = 0

    def nbytes(self) -> int:
        total = 0
        if self.state is not None:
            total += self.state.nbytes()
        if self.keys is not None:
            total += self.keys.nbytes + self.values.nbytes
        return total


@dataclass
class LayerCache:
    branches: list

    def nbytes(self) -> int:
        return sum(b.nbytes() for b in self.branches)


@dataclass
class SessionCache:
    """All layer caches of one decoding session plus the token counter."""

    layers: list
    tokens_seen: int = 0

    def nbytes(self) -> int:
        return sum(layer.nbytes() for layer in self.layers)


# --------------------------------------------------------------------------- #
# Building
# --------------------------------------------------------------------------- #
def _draw(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) * INIT_STD).astype(np.float32)


def _init_branch(rng, d_model: int, kind: str, sink_count: int) -> BranchParams:
    p = BranchParams(
        wq=_draw(rng, (d_model, d_model)),
        wk=_draw(rng, (d_model, d_model)),
        wv=_draw(rng, (d_model, d_model)),
        wo=_draw(rng, (d_model, d_model)),
    )
    if kind == "la":
        rank = _gate_rank(d_model)
        p.gate_a = _draw(rng, (d_model, rank))
        p.gate_b = _draw(rng, (rank, d_model))
    if kind == "fa" and sink_count:
        p.sink_embed = _draw(rng, (sink_count, d_model))
    return p


def _init_dense(rng, d_model: int) -> DenseFFN:
    d_ff = 4 * d_model
    return DenseFFN(
        w_gate=_draw(rng, (d_model, d_ff)),
        w_up=_draw(rng, (d_model, d_ff)),
        w_down=_draw(rng, (d_ff, d_model)),
    )


def _branch_specs(spec: LayerSpec) -> list:
    if "+" in spec.attention:
        return list(split_parallel(spec))
    return [spec]


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Initialize all parameters from one seed, in a fixed draw order."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    embedding = _draw(rng, (config.vocab, d))
    layers = []
    for spec in config.layout:
        branch_specs = _branch_specs(spec)
        branches = [_init_branch(rng, d, s.attention, s.sink_count) for s in branch_specs]
        merge = MergeWeights() if len(branches) == 2 else None
        if spec.ffn == "moe":
            m = config.moe
            experts = [_init_dense(rng, d) for _ in range(m.n_experts)]
            shared = [_init_dense(rng, d) for _ in range(m.n_shared)]
            router = (rng.uniform(-1.0, 1.0, (m.n_experts, d)) / math.sqrt(d)).astype(
                np.float32
            )
            ffn = MoELayer(experts, shared, router, m.top_k, m.sigma)
        else:
            ffn = _init_dense(rng, d)
        layers.append(LayerParams(spec=spec, branches=branches, merge=merge, ffn=ffn))
    head = _draw(rng, (config.vocab, d))
    return Model(config=config, embedding=embedding, layers=layers, head=head)


# --------------------------------------------------------------------------- #
# Projection helper (float or spike-coded)
# --------------------------------------------------------------------------- #
class _Projector:
    """Applies named linear maps; spike mode reroutes them through int8.

    Quantized weights are memoized on the model by tensor name, so repeated
    decode steps pay the quantization cost once. The optional collector
    receives every spike-count tensor produced, flattened, for statistics.
    """

    def __init__(self, model: Model, spike: SpikeSettings | None, collector=None):
        self.model = model
        self.spike = spike
        self.collector = collector

    def __call__(self, x: np.ndarray, w: np.ndarray, name: str) -> np.ndarray:
        if self.spike is None:
            return (x @ w).astype(np.float32)
        qm = self.model.quant_cache.get(name)
        if qm is None:
            qm = quantize_weights(np.ascontiguousarray(w.T))
            self.model.quant_cache[name] = qm
        sct = encode_activations(x, k=self.spike.k, granularity=self.spike.granularity)
        if self.collector is not None:
            self.collector.append(sct.counts.reshape(-1).copy())
        return w8_spike_project(qm, sct)


def _la_gate_full(xn, k_sig, p: BranchParams, heads: int):
    if p.gate_a is not None and p.gate_b is not None:
        return _split_heads(sigmoid(xn @ p.gate_a @ p.gate_b), heads)
    return key_tied_gate(k_sig)


# --------------------------------------------------------------------------- #
# Prefill
# --------------------------------------------------------------------------- #
def _branch_full(xn, spec: LayerSpec, kind: str, p: BranchParams, heads: int):
    """Whole-sequence forward of one branch, returning (output, cache)."""
    n, d_model = xn.shape
    d_head = d_model // heads
    q = _split_heads(xn @ p.wq, heads)
    k = _split_heads(xn @ p.wk, heads)
    v = _split_heads(xn @ p.wv, heads)

    if kind == "la":
        q = sigmoid(q)
        k = sigmoid(k)
        g = _la_gate_full(xn, k, p, heads)
        state = RecurrentState.zeros(heads, d_head, d_head)
        o = gla_chunkwise(q, k, v, g, chunk=GLA_CHUNK, state=state)
        o = rms_norm(o)
        cache = BranchCache(kind="la", state=state)
    else:
        q = q * np.float32(1.0 / math.sqrt(d_head))
        if kind == "fa" and spec.sink_count:
            s = p.sink_embed
            if s is None or s.shape[0] != spec.sink_count:
                raise DimensionError("sink_count does not match the branch sink embeddings")
            q_s = _split_heads(s @ p.wq, heads) * np.float32(1.0 / math.sqrt(d_head))
            k_s = _split_heads(s @ p.wk, heads)
            v_s = _split_heads(s @ p.wv, heads)
            sink_pos = np.arange(spec.sink_count)
            tok_pos = spec.sink_count + np.arange(n)
            q = np.concatenate([rope(q_s, sink_pos), rope(q, tok_pos)], axis=1)
            k = np.concatenate([rope(k_s, sink_pos), rope(k, tok_pos)], axis=1)
            v = np.concatenate([v_s, v], axis=1)
            o = softmax_attention(q, k, v, sink_count=spec.sink_count)[:, spec.sink_count:]
            cache = BranchCache(kind="fa", keys=k, values=v, sink_count=spec.sink_count)
        else:
            positions = np.arange(n)
            q = rope(q, positions)
            k = rope(k, positions)
            if kind == "fa":
                o = softmax_attention(q, k, v)
                cache = BranchCache(kind="fa", keys=k, values=v)
            else:
                o = swa(q, k, v, spec.window)
                keep = min(n, spec.window)
                cache = BranchCache(
                    kind="swa",
                    keys=np.ascontiguousarray(k[:, n - keep:]),
                    values=np.ascontiguousarray(v[:, n - keep:]),
                    window=spec.window,
                )
    return (_merge_heads(o) @ p.wo).astype(np.float32), cache


def _layer_full(x, layer: LayerParams, heads: int):
    specs = _branch_specs(layer.spec)
    xn = rms_norm(x)
    outs = []
    caches = []
    for spec, p in zip(specs, layer.branches):
        o, cache = _branch_full(xn, spec, spec.attention, p, heads)
        outs.append(o)
        caches.append(cache)
    if len(outs) == 1:
        x = (x + outs[0]).astype(np.float32)
    else:
        merged = np.float32(layer.merge.w1) * rms_norm(outs[0]) + np.float32(
            layer.merge.w2
        ) * rms_norm(outs[1])
        x = (x + merged).astype(np.float32)

    xn = rms_norm(x)
    if isinstance(layer.ffn, MoELayer):
        y = moe_forward(xn, layer.ffn)
    else:
        y = ffn_forward(xn, layer.ffn)
    return (x + y).astype(np.float32), LayerCache(branches=caches)


def _check_tokens(tokens, vocab: int):
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise EmptyInputError("token stream is empty")
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise DomainError(f"token ids must lie in [0, {vocab})")
    return tokens


def prefill(model: Model, tokens) -> tuple:
    """Run the whole prompt, returning last-position logits and the caches."""
    tokens = _check_tokens(tokens, model.config.vocab)
    x = model.embedding[tokens]
    layer_caches = []
    for layer in model.layers:
        x, cache = _layer_full(x, layer, model.config.heads)
        layer_caches.append(cache)
    logits = (rms_norm(x[-1:]) @ model.head.T).astype(np.float32)
    return logits[0], SessionCache(layers=layer_caches, tokens_seen=int(tokens.size))


# --------------------------------------------------------------------------- #
# Decode
# --------------------------------------------------------------------------- #
def _branch_step(xn, kind: str, p: BranchParams, heads: int, bc: BranchCache, pos: int, lin, prefix: str):
    d_model = xn.shape[1]
    d_head = d_model // heads
    q = _split_heads(lin(xn, p.wq, f"{prefix}.wq"), heads)  # [heads, 1, d_head]
    k = _split_heads(lin(xn, p.wk, f"{prefix}.wk"), heads)
    v = _split_heads(lin(xn, p.wv, f"{prefix}.wv"), heads)

    if kind == "la":
        q = sigmoid(q)
        k = sigmoid(k)
        if p.gate_a is not None and p.gate_b is not None:
            low = lin(xn, p.gate_a, f"{prefix}.gate_a")
            g = _split_heads(sigmoid(lin(low, p.gate_b, f"{prefix}.gate_b")), heads)
        else:
            g = key_tied_gate(k)
        o, _ = gla_recurrent(q[:, 0], k[:, 0], v[:, 0], g[:, 0], bc.state)
        o = rms_norm(o)[:, None, :]
    else:
        q = q * np.float32(1.0 / math.sqrt(d_head))
        position = np.array([bc.sink_count + pos])
        q = rope(q, position)
        k = rope(k, position)
        bc.keys = np.concatenate([bc.keys, k], axis=1)
        bc.values = np.concatenate([bc.values, v], axis=1)
        if kind == "swa" and bc.keys.shape[1] > bc.window:
            bc.keys = np.ascontiguousarray(bc.keys[:, -bc.window:])
            bc.values = np.ascontiguousarray(bc.values[:, -bc.window:])
        scores = q @ np.swapaxes(bc.keys, 1, 2)  # [heads, 1, m]
        probs = masked_softmax(scores, np.ones(scores.shape, dtype=bool))
        o = probs @ bc.values
    return lin(_merge_heads(o), p.wo, f"{prefix}.wo")


def _act(x, activation: str):
    if activation == "relu":
        return np.maximum(x, np.float32(0.0))
    return x * sigmoid(x)


def _dense_step(xn, ffn: DenseFFN, lin, prefix: str):
    gate = lin(xn, ffn.w_gate, f"{prefix}.w_gate")
    up = lin(xn, ffn.w_up, f"{prefix}.w_up")
    hidden = _act(gate, ffn.activation) * up
    return lin(hidden, ffn.w_down, f"{prefix}.w_down")


def _ffn_step(xn, ffn, lin, prefix: str):
    if not isinstance(ffn, MoELayer):
        return _dense_step(xn, ffn, lin, prefix)
    decision = route(xn[0], ffn)  # router logits stay float in spike mode
    y = np.zeros_like(xn)
    for i in decision.indices:
        y = y + decision.probs[i] * _dense_step(xn, ffn.experts[i], lin, f"{prefix}.experts.{i}")
    for s, shared in enumerate(ffn.shared):
        y = y + _dense_step(xn, shared, lin, f"{prefix}.shared.{s}")
    return y.astype(np.float32)


def _check_cache(model: Model, cache: SessionCache):
    if len(cache.layers) != len(model.layers):
        raise DimensionError(
            f"cache has {len(cache.layers)} layers, model has {len(model.layers)}"
        )
    for layer, lc in zip(model.layers, cache.layers):
        kinds = [s.attention for s in _branch_specs(layer.spec)]
        got = [b.kind for b in lc.branches]
        if kinds != got:
            raise DomainError(f"cache branches {got} do not match layer {kinds}")


def decode_step(
    model: Model,
    token: int,
    cache: SessionCache,
    spike: SpikeSettings | None = None,
    collector=None,
) -> tuple:
    """Advance one token. Returns (logits, cache); the cache mutates in place.

    With spike settings given, every linear projection consumes the spike
    counts of its input through the int8 path; attention arithmetic and
    routing remain float.
    """
    token = int(_check_tokens([token], model.config.vocab)[0])
    _check_cache(model, cache)
    lin = _Projector(model, spike, collector)
    pos = cache.tokens_seen
    x = model.embedding[token][None, :]
    for idx, (layer, lc) in enumerate(zip(model.layers, cache.layers)):
        specs = _branch_specs(layer.spec)
        xn = rms_norm(x)
        outs = [
            _branch_step(
                xn, spec.attention, p, model.config.heads, bc, pos, lin,
                f"layers.{idx}.attn.{j}",
            )
            for j, (spec, p, bc) in enumerate(zip(specs, layer.branches, lc.branches))
        ]
        if len(outs) == 1:
            x = (x + outs[0]).astype(np.float32)
        else:
            merged = np.float32(layer.merge.w1) * rms_norm(outs[0]) + np.float32(
                layer.merge.w2
            ) * rms_norm(outs[1])
            x = (x + merged).astype(np.float32)
        xn = rms_norm(x)
        x = (x + _ffn_step(xn, layer.ffn, lin, f"layers.{idx}.ffn")).astype(np.float32)

    logits = lin(rms_norm(x), model.head.T, "head")
    cache.tokens_seen = pos + 1
    return logits[0], cache


def greedy_generate(
    model: Model,
    prompt,
    steps: int,
    spike: SpikeSettings | None = None,
    collector=None,
) -> tuple:
    """Greedy decoding: argmax continuation of the prompt for `steps` tokens.

    Returns (generated ids, final logits). steps=0 is a pure prefill and
    returns the prompt's last-position logits untouched.
    """
    if steps < 0:
        raise DomainError("steps cannot be negative")
    logits, cache = prefill(model, prompt)
    out = []
    for _ in range(steps):
        nxt = int(np.argmax(logits))
        out.append(nxt)
        logits, cache = decode_step(model, nxt, cache, spike=spike, collector=collector)
    return out, logits
