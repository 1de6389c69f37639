"""Model configuration: dimensions, layer layout, MoE and spike-mode settings."""

from __future__ import annotations

from dataclasses import dataclass

from ..blocks import LayerSpec, build_layout
from ..errors import DimensionError, DomainError
from ..spikes import SCHEMES

__all__ = ["SpikeSettings", "MoESettings", "ModelConfig", "default_config"]

GRANULARITIES = ("per_token", "per_tensor")


@dataclass(frozen=True)
class SpikeSettings:
    """Decode-time spike coding: threshold divisor, scheme, and granularity."""

    k: float = 8.0
    scheme: str = "ternary"
    granularity: str = "per_token"

    def __post_init__(self):
        if self.k <= 0:
            raise DomainError(f"spike k must be positive, got {self.k}")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown spike scheme {self.scheme!r}")
        if self.granularity not in GRANULARITIES:
            raise DomainError(f"unknown granularity {self.granularity!r}")

    def to_dict(self) -> dict:
        return {"k": self.k, "scheme": self.scheme, "granularity": self.granularity}


@dataclass(frozen=True)
class MoESettings:
    """Expert counts and router shape shared by every MoE layer of a model."""

    n_experts: int = 4
    top_k: int = 1
    n_shared: int = 1
    sigma: str = "softmax"

    def __post_init__(self):
        if self.n_experts < 1:
            raise DomainError("need at least one expert")
        if not 1 <= self.top_k <= self.n_experts:
            raise DomainError(f"top_k {self.top_k} outside 1..{self.n_experts}")
        if self.n_shared < 0:
            raise DomainError("n_shared cannot be negative")
        if self.sigma not in ("softmax", "sigmoid"):
            raise DomainError(f"unknown router function {self.sigma!r}")

    def to_dict(self) -> dict:
        return {
            "n_experts": self.n_experts,
            "top_k": self.top_k,
            "n_shared": self.n_shared,
            "sigma": self.sigma,
        }


@dataclass
class ModelConfig:
    """Everything needed to build or load one toy model.

    The layout list pins one LayerSpec per layer; window and sink_count are
    the defaults handed to layout generation and carry no meaning once the
    layout is explicit. d_head is derived from d_model/heads when omitted.
    """

    depth: int
    d_model: int
    heads: int
    vocab: int
    layout: list
    d_head: int | None = None
    window: int = 8
    sink_count: int = 4
    moe: MoESettings | None = None
    spike: SpikeSettings | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise DomainError("depth must be at least 1")
        if self.heads < 1:
            raise DomainError("heads must be at least 1")
        if self.vocab < 2:
            raise DomainError("vocab must be at least 2")
        if self.d_head is None:
            if self.d_model % self.heads:
                raise DimensionError(
                    f"d_model {self.d_model} not divisible by {self.heads} heads"
                )
            self.d_head = self.d_model // self.heads
        if self.d_model != self.heads * self.d_head:
            raise DimensionError(
                f"d_model {self.d_model} != heads {self.heads} x d_head {self.d_head}"
            )
        if len(self.layout) != self.depth:
            raise DimensionError(
                f"layout has {len(self.layout)} entries for depth {self.depth}"
            )
        self.layout = [
            s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in self.layout
        ]
        if any(s.ffn == "moe" for s in self.layout) and self.moe is None:
            raise DomainError("layout contains MoE layers but no moe settings")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "d_model": self.d_model,
            "heads": self.heads,
            "d_head": self.d_head,
            "vocab": self.vocab,
            "layout": [s.to_dict() for s in self.layout],
            "window": self.window,
            "sink_count": self.sink_count,
            "moe": self.moe.to_dict() if self.moe else None,
            "spike": self.spike.to_dict() if self.spike else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        layout = d["layout"]
        window = d.get("window", 8)
        sink_count = d.get("sink_count", 4)
        if isinstance(layout, str):
            layout = build_layout(
                layout, d["depth"], window=window, sink_count=sink_count
            )
        moe = d.get("moe")
        spike = d.get("spike")
        return cls(
            depth=d["depth"],
            d_model=d["d_model"],
            heads=d["heads"],
            vocab=d["vocab"],
            layout=layout,
            d_head=d.get("d_head"),
            window=window,
            sink_count=sink_count,
            moe=MoESettings(**moe) if isinstance(moe, dict) else moe,
            spike=SpikeSettings(**spike) if isinstance(spike, dict) else spike,
        )


def default_config(
    kind: str = "7B-like",
    depth: int = 4,
    d_model: int = 128,
    heads: int = 4,
    vocab: int = 1024,
    window: int = 8,
    sink_count: int = 4,
    moe: MoESettings | None = None,
    spike: SpikeSettings | None = None,
) -> ModelConfig:
    """Convenience config with a generated layout for one of the families."""
    layout = build_layout(kind, depth, window=window, sink_count=sink_count)
    if moe is None and any(s.ffn == "moe" for s in layout):
        moe = MoESettings()
    return ModelConfig(
        depth=depth,
        d_model=d_model,
        heads=heads,
        vocab=vocab,
        layout=layout,
        window=window,
        sink_count=sink_count,
        moe=moe,
        spike=spike,
    )
