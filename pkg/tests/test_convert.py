import numpy as np
import pytest

from spikekit.attention import attention_map
from spikekit.blocks import LayerSpec
from spikekit.errors import DimensionError, DomainError
from spikekit.mathutil import rms_norm, sigmoid
from spikekit.moe import MoELayer, scaling_factor
from spikekit.runtime import (
    ModelConfig,
    MoESettings,
    build_model,
    convert_from_softmax,
    prefill,
)
from spikekit.runtime.model import _split_heads


def _fa_source(depth=2, sink_count=0, seed=6):
    cfg = ModelConfig(
        depth=depth, d_model=64, heads=2, vocab=128,
        layout=[LayerSpec("fa", sink_count=sink_count)] * depth,
    )
    return build_model(cfg, seed=seed)


def test_covering_swa_reproduces_source_logits(rng):
    source = _fa_source()
    target, report = convert_from_softmax(source, [LayerSpec("swa", window=64)] * 2)
    for _ in range(10):
        tokens = rng.integers(0, 128, size=int(rng.integers(4, 48)))
        a, _ = prefill(source, tokens)
        b, _ = prefill(target, tokens)
        assert np.array_equal(a, b)
    assert all(row["source"] == "fa" and row["target"] == "swa" for row in report)


def test_projections_and_head_are_shared():
    source = _fa_source()
    target, _ = convert_from_softmax(source, [LayerSpec("la")] * 2)
    assert target.embedding is source.embedding
    assert target.head is source.head
    for src_layer, tgt_layer in zip(source.layers, target.layers):
        assert tgt_layer.branches[0].wq is src_layer.branches[0].wq
        assert tgt_layer.ffn is src_layer.ffn


def test_linear_plan_grows_bounded_rank_maps(rng):
    source = _fa_source()
    target, report = convert_from_softmax(source, [LayerSpec("la")] * 2, seed=9)
    assert all(row["notes"]["gate_rank"] == 4 for row in report)
    heads, d_head = 2, 32
    tokens = rng.integers(0, 128, size=48)
    xn = rms_norm(target.embedding[tokens])
    p = target.layers[0].branches[0]
    q = sigmoid(_split_heads(xn @ p.wq, heads))
    k = sigmoid(_split_heads(xn @ p.wk, heads))
    amap = attention_map(q, k, "linear")
    assert np.min(amap.values) >= 0.0
    for h in range(heads):
        assert np.linalg.matrix_rank(amap.values[h]) <= d_head


def test_conversion_is_seed_deterministic():
    source = _fa_source()
    a, _ = convert_from_softmax(source, [LayerSpec("la")] * 2, seed=3)
    b, _ = convert_from_softmax(source, [LayerSpec("la")] * 2, seed=3)
    assert np.array_equal(a.layers[0].branches[0].gate_a, b.layers[0].branches[0].gate_a)
    c, _ = convert_from_softmax(source, [LayerSpec("la")] * 2, seed=4)
    assert not np.array_equal(a.layers[0].branches[0].gate_a, c.layers[0].branches[0].gate_a)


def test_moe_upcycling_replicates_scaled_experts():
    source = _fa_source()
    settings = MoESettings(n_experts=4, top_k=1, n_shared=1)
    plan = [LayerSpec("fa", ffn="moe")] * 2
    target, report = convert_from_softmax(source, plan, moe=settings)
    f = scaling_factor(4, 1, 1)
    for row in report:
        assert row["ffn"] == "moe"
        assert abs(row["notes"]["scaling_factor"] - 0.9283) < 5e-4
    for src_layer, tgt_layer in zip(source.layers, target.layers):
        layer = tgt_layer.ffn
        assert isinstance(layer, MoELayer) and len(layer.experts) == 4
        want = np.float32(f) * src_layer.ffn.w_gate
        for expert in layer.experts:
            assert np.array_equal(expert.w_gate, want)
            assert np.array_equal(expert.w_up, np.float32(f) * src_layer.ffn.w_up)
        assert np.array_equal(layer.shared[0].w_gate, want)
    assert target.config.moe == settings


def test_sink_embeddings_reused_or_fresh():
    with_sinks = _fa_source(sink_count=3)
    same, report = convert_from_softmax(with_sinks, [LayerSpec("fa", sink_count=3)] * 2)
    assert same.layers[0].branches[0].sink_embed is with_sinks.layers[0].branches[0].sink_embed
    assert "sink_embed" not in report[0]["notes"]

    without = _fa_source(sink_count=0)
    fresh, report = convert_from_softmax(without, [LayerSpec("fa", sink_count=2)] * 2)
    assert fresh.layers[0].branches[0].sink_embed.shape == (2, 64)
    assert report[0]["notes"]["sink_embed"] == "fresh"


def test_parallel_plan_gets_merge_weights(rng):
    source = _fa_source()
    target, _ = convert_from_softmax(source, [LayerSpec("la+swa", window=8)] * 2)
    assert target.layers[0].merge is not None
    assert len(target.layers[0].branches) == 2
    logits, _ = prefill(target, rng.integers(0, 128, size=12))
    assert np.all(np.isfinite(logits))


def test_conversion_validation():
    source = _fa_source()
    with pytest.raises(DimensionError):
        convert_from_softmax(source, [LayerSpec("la")])
    with pytest.raises(DomainError):
        convert_from_softmax(source, [LayerSpec("la", ffn="moe")] * 2)
    la_cfg = ModelConfig(
        depth=1, d_model=64, heads=2, vocab=128, layout=[LayerSpec("la")]
    )
    not_softmax = build_model(la_cfg, seed=0)
    with pytest.raises(DomainError):
        convert_from_softmax(not_softmax, [LayerSpec("la")])


def test_report_rows_are_complete():
    source = _fa_source()
    _, report = convert_from_softmax(source, [LayerSpec("swa", window=8)] * 2)
    assert [row["layer"] for row in report] == [1, 2]
    for row in report:
        assert set(row) == {"layer", "source", "target", "ffn", "notes"}
