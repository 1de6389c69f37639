import numpy as np
import pytest

from spikekit.blocks import LayerSpec
from spikekit.errors import DomainError, NumericError
from spikekit.runtime import ModelConfig, build_model
from spikekit.runtime.bench import (
    REFERENCE_MFU,
    REFERENCE_TGS,
    benchmark_prefill,
    count_params,
    fit_loglog_exponent,
    memory_profile,
    tgs_mfu_report,
)
from spikekit.runtime.checkpoint import tensor_walk


def _tiny(kind, **spec_kw):
    cfg = ModelConfig(
        depth=2, d_model=32, heads=2, vocab=64,
        layout=[LayerSpec(kind, **spec_kw)] * 2,
    )
    return build_model(cfg, seed=0)


def test_exponent_recovers_known_power_laws():
    lengths = [64, 128, 256, 512]
    quadratic = [1e-6 * n**2 for n in lengths]
    assert abs(fit_loglog_exponent(lengths, quadratic) - 2.0) < 1e-9
    linear = [3e-7 * n for n in lengths]
    assert abs(fit_loglog_exponent(lengths, linear) - 1.0) < 1e-9
    with pytest.raises(DomainError):
        fit_loglog_exponent([8], [0.1])


def test_benchmark_prefill_report_shape():
    model = _tiny("la")
    report = benchmark_prefill(model, [4, 8, 16], repeats=1)
    assert report.lengths == [4, 8, 16]
    assert all(t > 0 for t in report.seconds.values())
    doc = report.to_dict()
    assert set(doc) == {"lengths", "seconds", "exponent"}
    assert set(doc["seconds"]) == {"4", "8", "16"}
    assert np.isfinite(doc["exponent"])


def test_benchmark_validation():
    model = _tiny("la")
    with pytest.raises(DomainError):
        benchmark_prefill(model, [16])
    with pytest.raises(DomainError):
        benchmark_prefill(model, [16, 8])
    with pytest.raises(DomainError):
        benchmark_prefill(model, [1, 8])
    with pytest.raises(DomainError):
        benchmark_prefill(model, [4, 8], repeats=0)


def test_memory_profile_by_family():
    la = memory_profile(_tiny("la"), [64, 256, 1024])
    assert la[64] == la[256] == la[1024] > 0

    swa = memory_profile(_tiny("swa", window=8), [4, 64, 256])
    assert swa[4] < swa[64] == swa[256]

    fa = memory_profile(_tiny("fa"), [64, 256])
    # cache stores one rotated key and one value row per token
    assert fa[256] == 4 * fa[64]
    per_token = 2 * 32 * 4 * 2  # k+v, d_model floats, f32, two layers
    assert fa[64] == 64 * per_token


def test_count_params_matches_walk():
    model = _tiny("fa")
    total = sum(arr.size for _, arr in tensor_walk(model))
    assert count_params(model) == total > 0


def test_tgs_mfu_report_values():
    doc = tgs_mfu_report(1024, 1.0, n_params=10**6, devices=1, peak_flops=5e10)
    assert doc["tgs"] == pytest.approx(1024.0)
    assert doc["mfu"] == pytest.approx(2 * 10**6 * 1024 / 5e10)
    assert doc["reference"] == {"tgs": REFERENCE_TGS, "mfu": REFERENCE_MFU}

    halved = tgs_mfu_report(1024, 2.0, n_params=10**6)
    assert halved["tgs"] == pytest.approx(doc["tgs"] / 2)

    sharded = tgs_mfu_report(1024, 1.0, n_params=10**6, devices=4)
    assert sharded["tgs"] == pytest.approx(doc["tgs"] / 4)

    with pytest.raises(NumericError):
        tgs_mfu_report(1024, 0.0, n_params=10**6)
    with pytest.raises(DomainError):
        tgs_mfu_report(1024, 1.0, n_params=10**6, devices=0)
