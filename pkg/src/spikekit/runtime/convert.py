"""Turning a softmax-attention model into a hybrid one by weight reuse.

The source must be a pure full-attention stack. Conversion copies the QKV/
output projections and FFN weights verbatim into the planned layer kinds:
linear-attention branches gain sigmoid nonnegativity implicitly (it is part
of the branch forward) plus freshly initialized low-rank gate projections;
sliding-window branches reuse the weights with a window bound; dense FFNs
optionally upcycle into MoE layers with the output-scale correction.
"""

from __future__ import annotations

import numpy as np

from ..blocks import BranchParams, LayerSpec, MergeWeights
from ..errors import DimensionError, DomainError
from ..moe import scaling_factor, upcycle
from .config import ModelConfig, MoESettings
from .model import INIT_STD, LayerParams, Model, _branch_specs, _gate_rank

__all__ = ["convert_from_softmax"]


def _fresh(rng, shape):
    return (rng.standard_normal(shape) * INIT_STD).astype(np.float32)


def _branch_from_source(rng, src: BranchParams, bs: LayerSpec, d_model: int, notes: dict) -> BranchParams:
    p = BranchParams(wq=src.wq, wk=src.wk, wv=src.wv, wo=src.wo)
    if bs.attention == "la":
        rank = _gate_rank(d_model)
        p.gate_a = _fresh(rng, (d_model, rank))
        p.gate_b = _fresh(rng, (rank, d_model))
        notes["gate_rank"] = rank
    if bs.attention == "fa" and bs.sink_count:
        if src.sink_embed is not None and src.sink_embed.shape[0] == bs.sink_count:
            p.sink_embed = src.sink_embed
        else:
            p.sink_embed = _fresh(rng, (bs.sink_count, d_model))
            notes["sink_embed"] = "fresh"
    return p


def convert_from_softmax(
    source: Model,
    plan: list,
    seed: int = 0,
    moe: MoESettings | None = None,
) -> tuple:
    """Convert a full-attention model per the plan; returns (model, report).

    plan is one LayerSpec (or dict) per source layer. The report is a list
    of one JSON-friendly dict per layer describing what was copied, what was
    freshly initialized, and the MoE scaling factor where upcycling applied.
    """
    cfg = source.config
    plan = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in plan]
    if len(plan) != cfg.depth:
        raise DimensionError(f"plan has {len(plan)} layers, model has {cfg.depth}")
    for layer in source.layers:
        if layer.spec.attention != "fa":
            raise DomainError("conversion source must be a pure softmax-attention model")
    if any(s.ffn == "moe" for s in plan) and moe is None:
        raise DomainError("plan contains MoE layers but no moe settings were given")

    rng = np.random.default_rng(seed)
    new_layers = []
    report = []
    for i, (src_layer, spec) in enumerate(zip(source.layers, plan)):
        src_p = src_layer.branches[0]
        notes: dict = {}
        branch_specs = _branch_specs(spec)
        branches = [
            _branch_from_source(rng, src_p, bs, cfg.d_model, notes) for bs in branch_specs
        ]
        merge = MergeWeights() if len(branches) == 2 else None

        if spec.ffn == "moe":
            ffn = upcycle(src_layer.ffn, moe.n_experts, moe.top_k, moe.n_shared, seed=seed + i)
            notes["scaling_factor"] = scaling_factor(moe.n_experts, moe.top_k, moe.n_shared)
        else:
            ffn = src_layer.ffn

        new_layers.append(LayerParams(spec=spec, branches=branches, merge=merge, ffn=ffn))
        report.append(
            {
                "layer": i + 1,
                "source": src_layer.spec.attention,
                "target": spec.attention,
                "ffn": spec.ffn,
                "notes": notes,
            }
        )

    new_cfg = ModelConfig(
        depth=cfg.depth,
        d_model=cfg.d_model,
        heads=cfg.heads,
        vocab=cfg.vocab,
        layout=plan,
        d_head=cfg.d_head,
        window=cfg.window,
        sink_count=cfg.sink_count,
        moe=moe,
        spike=cfg.spike,
    )
    model = Model(
        config=new_cfg,
        embedding=source.embedding,
        layers=new_layers,
        head=source.head,
    )
    return model, report
