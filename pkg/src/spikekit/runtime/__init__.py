"""Toy-model runtime: configs, building, inference, conversion, benchmarks."""

from .bench import (
    BenchReport,
    benchmark_prefill,
    count_params,
    fit_loglog_exponent,
    memory_profile,
    tgs_mfu_report,
)
from .checkpoint import load_checkpoint, save_checkpoint, tensor_walk
from .config import ModelConfig, MoESettings, SpikeSettings, default_config
from .convert import convert_from_softmax
from .model import (
    BranchCache,
    LayerCache,
    LayerParams,
    Model,
    SessionCache,
    build_model,
    decode_step,
    greedy_generate,
    prefill,
)

__all__ = [
    "ModelConfig",
    "MoESettings",
    "SpikeSettings",
    "default_config",
    "Model",
    "LayerParams",
    "BranchCache",
    "LayerCache",
    "SessionCache",
    "build_model",
    "prefill",
    "decode_step",
    "greedy_generate",
    "save_checkpoint",
    "load_checkpoint",
    "tensor_walk",
    "convert_from_softmax",
    "BenchReport",
    "benchmark_prefill",
    "fit_loglog_exponent",
    "memory_profile",
    "count_params",
    "tgs_mfu_report",
]
