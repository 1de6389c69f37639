import numpy as np
import pytest

from spikekit.blocks import LayerSpec, attention_branch
from spikekit.errors import DimensionError, DomainError, EmptyInputError
from spikekit.mathutil import rms_norm
from spikekit.moe import MoELayer, moe_forward
from spikekit.runtime import (
    ModelConfig,
    MoESettings,
    SpikeSettings,
    build_model,
    decode_step,
    default_config,
    greedy_generate,
    prefill,
)
from spikekit.runtime.model import _branch_full, _init_branch


def _cfg(layout, d_model=64, heads=2, vocab=128, moe=None):
    return ModelConfig(
        depth=len(layout),
        d_model=d_model,
        heads=heads,
        vocab=vocab,
        layout=layout,
        moe=moe,
    )


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


LAYOUTS = {
    "pure-la": _cfg([LayerSpec("la")] * 3),
    "pure-fa": _cfg([LayerSpec("fa")] * 2),
    "fa-sinks": _cfg([LayerSpec("fa", sink_count=2)] * 2),
    "7B-like": default_config(depth=4, d_model=64, heads=2, vocab=128),
    "76B-like": default_config(
        "76B-like", depth=4, d_model=64, heads=2, vocab=128,
        moe=MoESettings(n_experts=2, top_k=1, n_shared=1),
    ),
}


# --------------------------------------------------------------------------- #
# Config
# --------------------------------------------------------------------------- #
def test_config_validation():
    with pytest.raises(DimensionError):
        ModelConfig(depth=1, d_model=65, heads=2, vocab=16, layout=[LayerSpec("la")])
    with pytest.raises(DimensionError):
        ModelConfig(depth=2, d_model=64, heads=2, vocab=16, layout=[LayerSpec("la")])
    with pytest.raises(DomainError):
        ModelConfig(
            depth=1, d_model=64, heads=2, vocab=16,
            layout=[LayerSpec("la", ffn="moe")],
        )


def test_config_round_trip():
    cfg = LAYOUTS["76B-like"]
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.layout == cfg.layout


def test_config_accepts_layout_shorthand():
    cfg = ModelConfig.from_dict(
        {"depth": 4, "d_model": 128, "heads": 4, "vocab": 1024, "layout": "7B-like"}
    )
    assert [s.attention for s in cfg.layout] == ["la", "swa", "la", "swa"]


def test_default_7b_layout_alternates():
    cfg = default_config(depth=4)
    assert [s.attention for s in cfg.layout] == ["la", "swa", "la", "swa"]
    assert all(s.ffn == "dense" for s in cfg.layout)


# --------------------------------------------------------------------------- #
# Building
# --------------------------------------------------------------------------- #
def test_build_is_deterministic():
    cfg = LAYOUTS["76B-like"]
    a, b = build_model(cfg, seed=7), build_model(cfg, seed=7)
    assert np.array_equal(a.embedding, b.embedding)
    assert np.array_equal(a.layers[3].branches[1].wq, b.layers[3].branches[1].wq)
    assert np.array_equal(a.layers[2].ffn.router_w, b.layers[2].ffn.router_w)
    c = build_model(cfg, seed=8)
    assert not np.array_equal(a.embedding, c.embedding)


def test_branch_forward_matches_blocks(rng):
    heads, d_model, n = 2, 64, 12
    xn = rms_norm(rng.standard_normal((n, d_model)).astype(np.float32))
    cases = [
        (LayerSpec("la"), "la"),
        (LayerSpec("swa", window=4), "swa"),
        (LayerSpec("fa"), "fa"),
        (LayerSpec("fa", sink_count=3), "fa"),
    ]
    for spec, kind in cases:
        sub = np.random.default_rng(5)
        p = _init_branch(sub, d_model, kind, spec.sink_count)
        out, _ = _branch_full(xn, spec, kind, p, heads)
        ref = attention_branch(
            xn, kind, p, heads, window=spec.window, sink_count=spec.sink_count
        )
        assert np.array_equal(out, ref), spec


# --------------------------------------------------------------------------- #
# Prefill / decode agreement
# --------------------------------------------------------------------------- #
@pytest.mark.parametrize("name", list(LAYOUTS))
def test_decode_matches_prefill(name, rng):
    cfg = LAYOUTS[name]
    model = build_model(cfg, seed=3)
    tokens = rng.integers(0, cfg.vocab, size=24)
    want, _ = prefill(model, tokens)
    logits, cache = prefill(model, tokens[:-4])
    for tok in tokens[-4:]:
        logits, cache = decode_step(model, int(tok), cache)
    assert _rel_err(logits, want) <= 1e-5
    assert cache.tokens_seen == 24


def test_prefill_is_deterministic(rng):
    model = build_model(LAYOUTS["7B-like"], seed=1)
    tokens = rng.integers(0, 128, size=16)
    a, _ = prefill(model, tokens)
    b, _ = prefill(model, tokens)
    assert np.array_equal(a, b)


def test_token_validation():
    model = build_model(LAYOUTS["pure-la"], seed=0)
    with pytest.raises(EmptyInputError):
        prefill(model, [])
    with pytest.raises(DomainError):
        prefill(model, [5, 128])
    _, cache = prefill(model, [1, 2])
    with pytest.raises(DomainError):
        decode_step(model, -1, cache)


def test_cache_model_mismatch():
    la = build_model(LAYOUTS["pure-la"], seed=0)
    fa = build_model(LAYOUTS["pure-fa"], seed=0)
    _, cache = prefill(la, [1, 2, 3])
    with pytest.raises((DimensionError, DomainError)):
        decode_step(fa, 1, cache)


# --------------------------------------------------------------------------- #
# Cache growth laws
# --------------------------------------------------------------------------- #
def test_la_cache_is_constant_size(rng):
    model = build_model(LAYOUTS["pure-la"], seed=0)
    _, small = prefill(model, rng.integers(0, 128, size=64))
    _, large = prefill(model, rng.integers(0, 128, size=512))
    assert small.nbytes() == large.nbytes() > 0


def test_swa_buffer_holds_min_n_w(rng):
    cfg = _cfg([LayerSpec("swa", window=8)])
    model = build_model(cfg, seed=0)
    _, cache = prefill(model, rng.integers(0, 128, size=5))
    assert cache.layers[0].branches[0].keys.shape[1] == 5
    _, cache = prefill(model, rng.integers(0, 128, size=50))
    assert cache.layers[0].branches[0].keys.shape[1] == 8
    for tok in (1, 2, 3):
        _, cache = decode_step(model, tok, cache)
        assert cache.layers[0].branches[0].keys.shape[1] == 8


def test_fa_cache_grows_one_pair_per_step(rng):
    model = build_model(LAYOUTS["fa-sinks"], seed=0)
    _, cache = prefill(model, rng.integers(0, 128, size=10))
    bc = cache.layers[0].branches[0]
    assert bc.keys.shape[1] == 12  # 2 sinks + 10 tokens
    before = cache.nbytes()
    _, cache = decode_step(model, 3, cache)
    assert cache.layers[0].branches[0].keys.shape[1] == 13
    per_step = cache.nbytes() - before
    _, cache = decode_step(model, 4, cache)
    assert cache.nbytes() - before == 2 * per_step


# --------------------------------------------------------------------------- #
# MoE integration
# --------------------------------------------------------------------------- #
def test_moe_decode_matches_module_forward(rng):
    model = build_model(LAYOUTS["76B-like"], seed=2)
    moe_layers = [l for l in model.layers if isinstance(l.ffn, MoELayer)]
    assert moe_layers, "expected MoE layers in the 76B-like layout"
    from spikekit.runtime.model import _ffn_step, _Projector

    lin = _Projector(model, None)
    x = rms_norm(rng.standard_normal((1, 64)).astype(np.float32))
    for layer in moe_layers:
        got = _ffn_step(x, layer.ffn, lin, "t")
        want = moe_forward(x, layer.ffn)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-7)


# --------------------------------------------------------------------------- #
# Greedy generation and spike mode
# --------------------------------------------------------------------------- #
def test_greedy_generate_is_deterministic(rng):
    model = build_model(LAYOUTS["7B-like"], seed=4)
    prompt = rng.integers(0, 128, size=8)
    a, _ = greedy_generate(model, prompt, steps=12)
    b, _ = greedy_generate(model, prompt, steps=12)
    assert a == b and len(a) == 12
    none, logits = greedy_generate(model, prompt, steps=0)
    assert none == [] and logits.shape == (128,)
    with pytest.raises(DomainError):
        greedy_generate(model, prompt, steps=-1)


def test_spike_decode_stays_close_and_collects(rng):
    model = build_model(LAYOUTS["7B-like"], seed=4)
    prompt = rng.integers(0, 128, size=8)
    _, cache = prefill(model, prompt)
    want, _ = decode_step(model, 5, cache)

    _, cache = prefill(model, prompt)
    counts = []
    spike = SpikeSettings(k=64.0)
    got, _ = decode_step(model, 5, cache, spike=spike, collector=counts)
    assert np.all(np.isfinite(got))
    assert int(np.argmax(got)) == int(np.argmax(want))
    assert counts and all(c.dtype == np.int64 for c in counts)
    assert model.quant_cache  # quantized weights were memoized
    # attention projections, gate pair, ffn trio per layer, head
    assert "head" in model.quant_cache
    assert any(name.endswith(".gate_a") for name in model.quant_cache)


def test_spike_router_choice_is_float(rng):
    model = build_model(LAYOUTS["76B-like"], seed=5)
    assert not any(
        name.endswith(".router") for name in model.quant_cache
    )
    prompt = rng.integers(0, 128, size=6)
    _, cache = prefill(model, prompt)
    decode_step(model, 1, cache, spike=SpikeSettings(k=8.0))
    assert not any(name.endswith(".router") for name in model.quant_cache)
