"""Mixture-of-experts layer: top-k routing, SwiGLU experts, dense upcycling.

Experts follow the gate/up/down FFN design. Routing computes probabilities
for every expert from a single router matrix, keeps the top-k (lowest index
wins ties), and mixes the selected expert outputs by their probabilities;
shared experts always fire. Upcycling replicates a dense FFN into all expert
slots with every weight matrix multiplied by the cube-root rescaling factor,
so a freshly upcycled layer reproduces the dense layer's output scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, EmptyInputError
from .mathutil import sigmoid, softmax

__all__ = [
    "DenseFFN",
    "MoELayer",
    "RoutingDecision",
    "ffn_forward",
    "route",
    "moe_forward",
    "scaling_factor",
    "upcycle",
    "load_balance_metric",
]


@dataclass
class DenseFFN:
    """Gated FFN: down(act(x @ w_gate) * (x @ w_up)).

    w_gate and w_up are [d_model, d_ff], w_down is [d_ff, d_model].
    """

    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    activation: str = "silu"

    def __post_init__(self):
        if self.activation not in ("silu", "relu"):
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.w_gate.shape[1] != self.w_up.shape[1] or self.w_up.shape[1] != self.w_down.shape[0]:
            raise DimensionError("gate/up output width must match down input width")

    def scaled(self, f: float) -> "DenseFFN":
        f = np.float32(f)
        return DenseFFN(
            (self.w_gate * f).astype(np.float32),
            (self.w_up * f).astype(np.float32),
            (self.w_down * f).astype(np.float32),
            self.activation,
        )


@dataclass
class MoELayer:
    experts: list  # N routed DenseFFNs
    shared: list = field(default_factory=list)  # S always-on DenseFFNs
    router_w: np.ndarray = None  # [N, d_model]
    top_k: int = 1
    sigma: str = "softmax"

    def __post_init__(self):
        n = len(self.experts)
        if n < 1:
            raise DomainError("an MoE layer needs at least one expert")
        if not 1 <= self.top_k <= n:
            raise DomainError(f"top_k {self.top_k} outside 1..{n}")
        if self.sigma not in ("softmax", "sigmoid"):
            raise DomainError(f"unknown router function {self.sigma!r}")
        if self.router_w is None or self.router_w.shape[0] != n:
            raise DimensionError("router_w must have one row per expert")


@dataclass(frozen=True)
class RoutingDecision:
    """Selected expert ids (ascending, top-k by probability) and all N probs."""

    indices: tuple
    probs: np.ndarray


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, np.float32(0.0))
    return x * sigmoid(x)  # silu


def ffn_forward(x: np.ndarray, ffn: DenseFFN) -> np.ndarray:
    """Gated FFN forward for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float32)
    hidden = _activate(x @ ffn.w_gate, ffn.activation) * (x @ ffn.w_up)
    return (hidden @ ffn.w_down).astype(np.float32)


def _router_probs(x: np.ndarray, layer: MoELayer) -> np.ndarray:
    logits = x @ layer.router_w.T
    if layer.sigma == "sigmoid":
        return sigmoid(logits)
    return softmax(logits, axis=-1)


def route(x: np.ndarray, layer: MoELayer) -> RoutingDecision:
    """Route a single token vector: probabilities plus the chosen expert set.

    Ties break toward the lowest expert index (stable sort on descending
    probability), so identical inputs always yield identical decisions.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 1:
        raise DimensionError("route takes a single token vector")
    probs = _router_probs(x, layer)
    order = np.argsort(-probs, kind="stable")
    chosen = tuple(sorted(int(i) for i in order[: layer.top_k]))
    return RoutingDecision(chosen, probs)


def moe_forward(x: np.ndarray, layer: MoELayer) -> np.ndarray:
    """Mix the top-k expert outputs by routing probability, add shared experts.

    Accepts a single [d_model] vector or an [n, d_model] batch; tokens are
    routed independently either way.
    """
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 1
    tokens = x[None, :] if single else x
    n = tokens.shape[0]
    n_experts = len(layer.experts)

    probs = _router_probs(tokens, layer)  # [n, N]
    order = np.argsort(-probs, axis=1, kind="stable")[:, : layer.top_k]
    selected = np.zeros((n, n_experts), dtype=bool)
    np.put_along_axis(selected, order, True, axis=1)

    y = np.zeros_like(tokens)
    for i, expert in enumerate(layer.experts):
        mask = selected[:, i]
        if mask.any():
            y[mask] += probs[mask, i, None] * ffn_forward(tokens[mask], expert)
    for shared in layer.shared:
        y += ffn_forward(tokens, shared)
    return y[0] if single else y


def scaling_factor(n_experts: int, top_k: int, n_shared: int) -> float:
    """Cube-root output rescale for dense-to-MoE upcycling: (1/(S + k/N))^(1/3).

    The denominator is the expected number of effective dense replicas a
    token passes through (shared experts plus the routed mass k/N); the cube
    root spreads the correction across the three FFN matrices.
    """
    if n_experts < 1:
        raise DomainError("scaling_factor needs at least one expert")
    if not 1 <= top_k <= n_experts:
        raise DomainError(f"top_k {top_k} outside 1..{n_experts}")
    if n_shared < 0:
        raise DomainError("shared expert count must be non-negative")
    mass = n_shared + top_k / n_experts
    if mass == 0:
        raise DomainError("S + k/N must be positive")
    return float((1.0 / mass) ** (1.0 / 3.0))


def upcycle(dense: DenseFFN, n_experts: int, top_k: int, n_shared: int, seed: int) -> MoELayer:
    """Replicate a dense FFN into an MoE layer with rescaled weights.

    Every routed and shared expert starts as the dense FFN with all three
    matrices multiplied by scaling_factor(N, top_k, S); the router is drawn
    zero-mean uniform scaled by 1/sqrt(d_model) from the given seed.
    """
    f = scaling_factor(n_experts, top_k, n_shared)
    d_model = dense.w_gate.shape[0]
    rng = np.random.default_rng(seed)
    router = (rng.uniform(-1.0, 1.0, (n_experts, d_model)) / np.sqrt(d_model)).astype(np.float32)
    return MoELayer(
        experts=[dense.scaled(f) for _ in range(n_experts)],
        shared=[dense.scaled(f) for _ in range(n_shared)],
        router_w=router,
        top_k=top_k,
        sigma="softmax",
    )


def load_balance_metric(decisions: list, n_experts: int) -> float:
    """N times the dot product of routing fractions and mean probabilities.

    f_i is the fraction of tokens whose decision includes expert i, P_i the
    mean routed probability of expert i over all tokens. Uniform routing with
    top_k = 1 scores exactly 1.0; total collapse onto one expert scores N.
    """
    if not decisions:
        raise EmptyInputError("load_balance_metric needs at least one decision")
    counts = np.zeros(n_experts, dtype=np.float64)
    prob_sums = np.zeros(n_experts, dtype=np.float64)
    for decision in decisions:
        for i in decision.indices:
            counts[i] += 1.0
        prob_sums += decision.probs
    f = counts / len(decisions)
    p = prob_sums / len(decisions)
    return float(n_experts * np.dot(f, p))
