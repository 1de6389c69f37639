"""Command-line front door: build, convert, run, bench, spikes.

Every subcommand reads and writes plain files, prints one JSON document to
stdout, and returns a stable exit code: 0 success, 2 usage or validation
problems (bad flags, malformed inputs, domain violations), 3 output-side
I/O failures (unwritable paths, refusing to overwrite without --force),
4 numeric failures. Paths given via --out also receive a rendered PNG
figure next to the delimited or JSON payload where a figure applies.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys

import numpy as np

from .analysis import (
    energy_report,
    firing_stats,
    raster_rows,
    stats_document,
    write_raster_csv,
)
from .errors import DomainError, FormatError, NumericError, SpikekitError
from .figures import save_histogram_figure, save_raster_figure, save_scaling_figure
from .runtime import (
    ModelConfig,
    MoESettings,
    SpikeSettings,
    benchmark_prefill,
    build_model,
    convert_from_softmax,
    count_params,
    greedy_generate,
    load_checkpoint,
    memory_profile,
    prefill,
    save_checkpoint,
    tgs_mfu_report,
)
from .spikes import adaptive_threshold, encode_counts, expand, symmetric_remap

__all__ = ["main", "read_tensor_file", "write_tensor_file", "TENSOR_MAGIC"]

TENSOR_MAGIC = b"SBTN"
_TENSOR_HEAD = struct.Struct("<4sI")
_MAX_RANK = 16


class OutputError(Exception):
    """Output-side I/O failure; mapped to exit code 3."""


# --------------------------------------------------------------------------- #
# Tensor container
# --------------------------------------------------------------------------- #
def write_tensor_file(path, array) -> None:
    """Write a float32 tensor: magic, u32 rank, u64 dims, little-endian data."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(_TENSOR_HEAD.pack(TENSOR_MAGIC, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor_file(path) -> np.ndarray:
    """Read a tensor container; malformed headers or payloads are FormatError."""
    with open(path, "rb") as fh:
        head = fh.read(_TENSOR_HEAD.size)
        if len(head) != _TENSOR_HEAD.size:
            raise FormatError("tensor file too short for its header")
        magic, rank = _TENSOR_HEAD.unpack(head)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"bad tensor magic {magic!r}")
        if rank == 0 or rank > _MAX_RANK:
            raise FormatError(f"unreasonable tensor rank {rank}")
        dims_raw = fh.read(8 * rank)
        if len(dims_raw) != 8 * rank:
            raise FormatError("tensor file truncated in dimension list")
        dims = struct.unpack(f"<{rank}Q", dims_raw)
        n = 1
        for d in dims:
            n *= d
        payload = fh.read(4 * n)
        if len(payload) != 4 * n:
            raise FormatError("tensor file truncated in payload")
        return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


# --------------------------------------------------------------------------- #
# Small plumbing helpers
# --------------------------------------------------------------------------- #
def _prepare_out(path, force: bool) -> str:
    path = os.fspath(path)
    if os.path.exists(path) and not force:
        raise OutputError(f"refusing to overwrite {path} (pass --force)")
    return path


def _guard(fn, *args, **kwargs):
    """Run a writer, converting OSError into the output-side failure class."""
    try:
        return fn(*args, **kwargs)
    except OSError as exc:
        raise OutputError(str(exc)) from exc


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False))


def _sibling_png(path) -> str:
    stem, _ = os.path.splitext(os.fspath(path))
    return stem + ".png"


def _read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def _read_prompt(path) -> list:
    with open(path) as fh:
        text = fh.read()
    try:
        return [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise DomainError(f"{path}: prompt files hold whitespace-separated integer ids") from exc


def _spike_bits(scheme: str, bits: int):
    return bits if scheme.startswith("bitwise") else None


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #
def cmd_build(args) -> int:
    out = _prepare_out(args.out, args.force)
    cfg = ModelConfig.from_dict(_read_json(args.config))
    model = build_model(cfg, seed=args.seed)
    _guard(save_checkpoint, model, out)
    _emit(
        {
            "command": "build",
            "out": out,
            "seed": args.seed,
            "depth": cfg.depth,
            "d_model": cfg.d_model,
            "params": count_params(model),
        }
    )
    return 0


def _parse_plan(doc):
    if isinstance(doc, list):
        return doc, None
    if isinstance(doc, dict) and "plan" in doc:
        moe = doc.get("moe")
        return doc["plan"], MoESettings(**moe) if moe else None
    raise FormatError("plan file must be a JSON list of layer specs or {plan: [...], moe: {...}}")


def cmd_convert(args) -> int:
    out = _prepare_out(args.out, args.force)
    source = load_checkpoint(args.src)
    plan, moe = _parse_plan(_read_json(args.plan))
    target, report = convert_from_softmax(source, plan, seed=args.seed, moe=moe)
    _guard(save_checkpoint, target, out)
    _emit({"command": "convert", "out": out, "seed": args.seed, "layers": report})
    return 0


def cmd_run(args) -> int:
    out = _prepare_out(args.out, args.force) if args.out else None
    model = load_checkpoint(args.ckpt)
    prompt = _read_prompt(args.prompt)
    if args.steps < 0:
        raise DomainError("--steps cannot be negative")

    spike = None
    collector = None
    if args.spike is not None:
        if args.steps == 0:
            raise DomainError("--spike applies to decode steps; give --steps >= 1")
        spike = SpikeSettings(k=args.spike, scheme=args.scheme, granularity=args.granularity)
        collector = []

    if args.steps == 0:
        logits, _ = prefill(model, prompt)
        tokens = []
    else:
        tokens, logits = greedy_generate(
            model, prompt, args.steps, spike=spike, collector=collector
        )

    doc = {
        "command": "run",
        "prompt_len": len(prompt),
        "steps": args.steps,
        "tokens": tokens,
        "logits": [float(v) for v in logits],
    }
    if collector is not None:
        counts = np.concatenate(collector)
        train = expand(counts, args.scheme, bits=_spike_bits(args.scheme, args.bits))
        stats = firing_stats(counts, train=train, window=args.window)
        doc["spike"] = stats_document(stats, energy_report(stats))
        doc["spike"]["scheme"] = args.scheme
        doc["spike"]["k"] = args.spike
    _emit(doc)
    if out:
        _guard(_write_json, out, doc)
        if collector is not None:
            figure = _prepare_out(_sibling_png(out), args.force)
            _guard(save_histogram_figure, doc["spike"]["histogram"], figure)
    return 0


def cmd_bench(args) -> int:
    out = _prepare_out(args.out, args.force) if args.out else None
    model = load_checkpoint(args.ckpt)
    try:
        lengths = [int(tok) for tok in args.lengths.split(",") if tok.strip()]
    except ValueError as exc:
        raise DomainError("--lengths must be a comma-separated list of integers") from exc

    report = benchmark_prefill(model, lengths, repeats=args.repeats, seed=args.seed)
    memory = memory_profile(model, lengths, seed=args.seed)
    params = count_params(model)
    largest = report.lengths[-1]
    throughput = tgs_mfu_report(largest, report.seconds[largest], params)

    doc = report.to_dict()
    doc.update(
        {
            "command": "bench",
            "repeats": args.repeats,
            "params": params,
            "memory_bytes": {str(n): b for n, b in memory.items()},
            "throughput": throughput,
        }
    )
    _emit(doc)
    if out:
        _guard(_write_json, out, doc)
        figure = _prepare_out(_sibling_png(out), args.force)
        _guard(save_scaling_figure, report.lengths, report.seconds, report.exponent, figure)
    return 0


def cmd_spikes(args) -> int:
    out = _prepare_out(args.out, args.force)
    figure = _prepare_out(_sibling_png(out), args.force)
    x = read_tensor_file(args.tensor)
    v_th = adaptive_threshold(x, args.spike, args.granularity)
    counts = encode_counts(x, v_th).counts
    offset = None
    if args.symmetric_remap:
        counts, offset = symmetric_remap(counts)
    train = expand(counts, args.scheme, bits=_spike_bits(args.scheme, args.bits))
    rows = raster_rows(train)
    _guard(write_raster_csv, out, rows)
    _guard(save_raster_figure, rows, figure, f"{args.scheme} raster")

    stats = firing_stats(counts, train=train, window=args.window)
    doc = stats_document(stats, energy_report(stats))
    doc.update(
        {
            "command": "spikes",
            "scheme": args.scheme,
            "k": args.spike,
            "timesteps": train.timesteps,
            "events": len(rows),
            "remap_offset": offset,
            "out": out,
            "figure": figure,
        }
    )
    _emit(doc)
    return 0


# --------------------------------------------------------------------------- #
# Parser and entry point
# --------------------------------------------------------------------------- #
def _add_spike_flags(sub, k_default=None):
    sub.add_argument("--spike", type=float, default=k_default, metavar="K",
                     help="spike-code activations with threshold divisor K")
    sub.add_argument("--scheme", default="ternary",
                     choices=["binary", "ternary", "bitwise_pure", "bitwise_bidir", "bitwise_twos"])
    sub.add_argument("--granularity", default="per_token", choices=["per_token", "per_tensor"])
    sub.add_argument("--window", type=int, default=3, help="sparsity window in timesteps")
    sub.add_argument("--bits", type=int, default=8, help="bit width for bitwise schemes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikekit",
        description="Desk-scale inference kit: build, convert, run, bench, spikes.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("build", help="initialize a model from a config and save it")
    p.add_argument("--config", required=True, help="JSON model config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_build)

    p = subs.add_parser("convert", help="convert a full-attention checkpoint per a plan")
    p.add_argument("src", help="source checkpoint (all softmax attention)")
    p.add_argument("--plan", required=True, help="JSON conversion plan")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = subs.add_parser("run", help="prefill a prompt and greedily decode")
    p.add_argument("ckpt")
    p.add_argument("prompt", help="text file of whitespace-separated token ids")
    p.add_argument("--steps", type=int, default=0)
    _add_spike_flags(p)
    p.add_argument("--out", default=None, help="also write the run document here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("bench", help="time prefill across lengths and fit the exponent")
    p.add_argument("ckpt")
    p.add_argument("--lengths", default="64,128,256", help="comma-separated prompt lengths")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="also write the report (plus a PNG) here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("spikes", help="encode a tensor and export raster + statistics")
    p.add_argument("tensor", help="SBTN tensor file")
    _add_spike_flags(p, k_default=1.0)
    p.add_argument("--symmetric-remap", action="store_true",
                   help="recenter counts around zero before expansion")
    p.add_argument("--out", required=True, help="raster CSV path (PNG lands beside it)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_spikes)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    try:
        return args.func(args)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SpikekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
