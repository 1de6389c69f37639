"""Single-file checkpoint container: magic, version, JSON manifest, raw blob.

Layout: ``b"SBKT"`` + u16 version + u64 manifest length + manifest bytes +
payload. The manifest lists every tensor with dtype, shape and byte offset
into the payload; int8 tensors carry a reference to their per-row f32 scale
vector and a transpose marker (projections are stored output-row-major so
the scales sit on output channels). All integers little-endian; manifest
keys sorted, so identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..blocks import BranchParams, MergeWeights
from ..errors import FormatError
from ..moe import DenseFFN, MoELayer
from ..quant import quantize_weights
from .config import ModelConfig
from .model import LayerParams, Model, _branch_specs

__all__ = ["MAGIC", "VERSION", "tensor_walk", "save_checkpoint", "load_checkpoint"]

MAGIC = b"SBKT"
VERSION = 1
_HEADER = struct.Struct("<4sHQ")

# Tensors kept in f32 even in int8 checkpoints: lookups and learned inputs,
# not linear maps.
_NEVER_QUANTIZE = ("embedding",)


def tensor_walk(model: Model):
    """Yield (name, array) for every parameter, in a fixed canonical order."""
    yield "embedding", model.embedding
    for i, layer in enumerate(model.layers):
        for j, p in enumerate(layer.branches):
            base = f"layers.{i}.attn.{j}"
            yield f"{base}.wq", p.wq
            yield f"{base}.wk", p.wk
            yield f"{base}.wv", p.wv
            yield f"{base}.wo", p.wo
            if p.gate_a is not None:
                yield f"{base}.gate_a", p.gate_a
                yield f"{base}.gate_b", p.gate_b
            if p.sink_embed is not None:
                yield f"{base}.sink_embed", p.sink_embed
        if layer.merge is not None:
            yield f"layers.{i}.merge", np.array(
                [layer.merge.w1, layer.merge.w2], dtype=np.float32
            )
        base = f"layers.{i}.ffn"
        if isinstance(layer.ffn, MoELayer):
            for e, expert in enumerate(layer.ffn.experts):
                yield from _ffn_walk(f"{base}.experts.{e}", expert)
            for s, shared in enumerate(layer.ffn.shared):
                yield from _ffn_walk(f"{base}.shared.{s}", shared)
            yield f"{base}.router", layer.ffn.router_w
        else:
            yield from _ffn_walk(base, layer.ffn)
    yield "head", model.head


def _ffn_walk(base: str, ffn: DenseFFN):
    yield f"{base}.w_gate", ffn.w_gate
    yield f"{base}.w_up", ffn.w_up
    yield f"{base}.w_down", ffn.w_down


def _quantizable(name: str, arr: np.ndarray) -> bool:
    return arr.ndim == 2 and name not in _NEVER_QUANTIZE and not name.endswith(".sink_embed")


def save_checkpoint(model: Model, path, int8: bool = False) -> None:
    """Serialize a model; int8=True stores linear maps quantized with scales."""
    records = []
    payload = bytearray()
    for name, arr in tensor_walk(model):
        arr = np.ascontiguousarray(arr)
        if int8 and _quantizable(name, arr):
            qm = quantize_weights(np.ascontiguousarray(arr.T))
            records.append(
                {
                    "name": name,
                    "dtype": "i8",
                    "shape": list(qm.q.shape),
                    "offset": len(payload),
                    "scale": f"{name}.scale",
                    "transpose": True,
                }
            )
            payload += qm.q.tobytes()
            records.append(
                {
                    "name": f"{name}.scale",
                    "dtype": "f32",
                    "shape": [int(qm.scale.shape[0])],
                    "offset": len(payload),
                }
            )
            payload += qm.scale.astype("<f4").tobytes()
        else:
            records.append(
                {
                    "name": name,
                    "dtype": "f32",
                    "shape": list(arr.shape),
                    "offset": len(payload),
                }
            )
            payload += arr.astype("<f4").tobytes()

    manifest = {"config": model.config.to_dict(), "tensors": records}
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return data


_DTYPE_SIZE = {"f32": 4, "i8": 1}


def load_checkpoint(path) -> Model:
    """Read a checkpoint back into a Model, dequantizing int8 tensors."""
    with open(path, "rb") as fh:
        magic, version, manifest_len = _HEADER.unpack(
            _read_exact(fh, _HEADER.size, "header")
        )
        if magic != MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        try:
            manifest = json.loads(_read_exact(fh, manifest_len, "manifest"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable checkpoint manifest: {exc}") from exc
        payload = fh.read()

    try:
        config = ModelConfig.from_dict(manifest["config"])
        records = manifest["tensors"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint manifest missing field: {exc}") from exc

    raw = {}
    for rec in records:
        size = _DTYPE_SIZE[rec["dtype"]] * int(np.prod(rec["shape"], dtype=np.int64))
        start = rec["offset"]
        if start < 0 or start + size > len(payload):
            raise FormatError(f"tensor {rec['name']} overruns the payload")
        buf = payload[start:start + size]
        if rec["dtype"] == "i8":
            raw[rec["name"]] = np.frombuffer(buf, dtype=np.int8).reshape(rec["shape"])
        else:
            raw[rec["name"]] = (
                np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(rec["shape"])
            )

    tensors = {}
    for rec in records:
        name = rec["name"]
        if rec["dtype"] == "i8":
            scale = raw[rec["scale"]]
            w = (scale[:, None] * raw[name]).astype(np.float32)
            tensors[name] = w.T.copy() if rec.get("transpose") else w
        elif not name.endswith(".scale"):
            tensors[name] = raw[name]
    return _model_from_tensors(config, tensors)


def _take(tensors: dict, name: str) -> np.ndarray:
    try:
        return tensors[name]
    except KeyError:
        raise FormatError(f"checkpoint is missing tensor {name!r}") from None


def _ffn_from(tensors: dict, base: str) -> DenseFFN:
    return DenseFFN(
        w_gate=_take(tensors, f"{base}.w_gate"),
        w_up=_take(tensors, f"{base}.w_up"),
        w_down=_take(tensors, f"{base}.w_down"),
    )


def _model_from_tensors(config: ModelConfig, tensors: dict) -> Model:
    layers = []
    for i, spec in enumerate(config.layout):
        branch_specs = _branch_specs(spec)
        branches = []
        for j, bs in enumerate(branch_specs):
            base = f"layers.{i}.attn.{j}"
            branches.append(
                BranchParams(
                    wq=_take(tensors, f"{base}.wq"),
                    wk=_take(tensors, f"{base}.wk"),
                    wv=_take(tensors, f"{base}.wv"),
                    wo=_take(tensors, f"{base}.wo"),
                    gate_a=tensors.get(f"{base}.gate_a"),
                    gate_b=tensors.get(f"{base}.gate_b"),
                    sink_embed=tensors.get(f"{base}.sink_embed"),
                )
            )
        merge = None
        if len(branch_specs) == 2:
            mv = _take(tensors, f"layers.{i}.merge")
            merge = MergeWeights(float(mv[0]), float(mv[1]))
        base = f"layers.{i}.ffn"
        if spec.ffn == "moe":
            m = config.moe
            experts = [_ffn_from(tensors, f"{base}.experts.{e}") for e in range(m.n_experts)]
            shared = [_ffn_from(tensors, f"{base}.shared.{s}") for s in range(m.n_shared)]
            ffn = MoELayer(experts, shared, _take(tensors, f"{base}.router"), m.top_k, m.sigma)
        else:
            ffn = _ffn_from(tensors, base)
        layers.append(LayerParams(spec=spec, branches=branches, merge=merge, ffn=ffn))
    return Model(
        config=config,
        embedding=_take(tensors, "embedding"),
        layers=layers,
        head=_take(tensors, "head"),
    )
