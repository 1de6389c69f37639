import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikekit.errors import DimensionError, DomainError, NumericError, SchemeError
from spikekit.spikes import (
    NeuronParams,
    adaptive_threshold,
    collapse,
    encode_activations,
    encode_counts,
    expand,
    if_simulate,
    spike_project,
    spike_project_expanded,
    symmetric_remap,
)


# --------------------------------------------------------------------------- #
# Thresholds
# --------------------------------------------------------------------------- #
def test_per_tensor_threshold_is_mean_abs_over_k():
    x = np.array([1.0, -1.0, 3.0, -3.0], dtype=np.float32)
    assert adaptive_threshold(x, 1.0, "per_tensor") == pytest.approx(2.0)
    assert adaptive_threshold(x, 4.0, "per_tensor") == pytest.approx(0.5)


def test_gaussian_threshold_near_point_eight():
    rng = np.random.default_rng(99)
    x = rng.standard_normal(100_000).astype(np.float32)
    v = float(adaptive_threshold(x, 1.0, "per_tensor"))
    assert abs(v - 0.798) < 0.01


def test_zero_input_gets_epsilon_threshold():
    x = np.zeros((3, 8), dtype=np.float32)
    v = adaptive_threshold(x, 2.0, "per_token")
    assert np.all(v == np.float32(1e-6))
    sct = encode_activations(x, k=2.0)
    assert np.all(sct.counts == 0)


def test_per_token_threshold_rows(rng):
    x = rng.standard_normal((4, 16)).astype(np.float32)
    v = adaptive_threshold(x, 2.0, "per_token")
    assert v.shape == (4, 1)
    np.testing.assert_allclose(v[:, 0], np.abs(x).mean(axis=1) / 2.0, rtol=1e-6)


def test_threshold_validation():
    x = np.ones(4, dtype=np.float32)
    with pytest.raises(DomainError):
        adaptive_threshold(x, 0.0, "per_tensor")
    with pytest.raises(DomainError):
        adaptive_threshold(x, 1.0, "per_channel")


# --------------------------------------------------------------------------- #
# Count encoding
# --------------------------------------------------------------------------- #
def test_rounding_is_half_away_from_zero():
    sct = encode_counts(np.array([5.0, -3.9, 2.5, -2.5, 0.0], dtype=np.float32), np.float32(1.0))
    np.testing.assert_array_equal(sct.counts, [5, -4, 3, -3, 0])
    assert encode_counts(np.array([5.0], dtype=np.float32), np.float32(2.0)).counts[0] == 3


def test_reconstruction_error_bound(rng):
    x = rng.standard_normal((32, 64)).astype(np.float32)
    sct = encode_activations(x, k=1.0)
    err = np.abs(x - sct.reconstruct())
    assert np.all(err <= sct.v_th / 2 + 1e-7)


def test_count_sign_matches_input(rng):
    x = rng.standard_normal(256).astype(np.float32)
    sct = encode_activations(x, k=2.0, granularity="per_tensor")
    nonzero = sct.counts != 0
    np.testing.assert_array_equal(np.sign(sct.counts[nonzero]), np.sign(x[nonzero]))


def test_monotonicity_in_k(rng):
    x = rng.standard_normal(512).astype(np.float32)
    prev_counts = None
    prev_err = None
    for k in (0.5, 1.0, 2.0, 4.0, 8.0):
        sct = encode_activations(x, k=k, granularity="per_tensor")
        err = float(np.mean(np.abs(x - sct.reconstruct())))
        if prev_counts is not None:
            assert np.all(np.abs(sct.counts) >= np.abs(prev_counts))
            assert err <= prev_err + 1e-9
        prev_counts, prev_err = sct.counts, err


def test_nonfinite_input_rejected():
    with pytest.raises(NumericError):
        encode_counts(np.array([1.0, np.inf], dtype=np.float32), np.float32(1.0))
    with pytest.raises(DomainError):
        encode_counts(np.ones(2, dtype=np.float32), np.float32(-1.0))


def test_outlier_burst_response(rng):
    x = rng.standard_normal(4096).astype(np.float32)
    base_v = float(adaptive_threshold(x, 1.0, "per_tensor"))
    spiked = x.copy()
    spiked[0] = 10.0
    sct = encode_activations(spiked, k=1.0, granularity="per_tensor")
    assert abs(sct.counts[0]) > np.median(np.abs(sct.counts))
    # the threshold barely moves: bounded by the outlier's share of the mean
    assert abs(float(sct.v_th) - base_v) < 10.0 / 4096


# --------------------------------------------------------------------------- #
# Integrate-and-fire oracle
# --------------------------------------------------------------------------- #
def test_if_simulation_basic_counts():
    assert if_simulate(5.0, 1.0, 10) == 5
    assert if_simulate(0.49, 1.0, 10) == 0  # below v_th/2 never crosses
    assert if_simulate(0.51, 1.0, 10) == 1


def test_if_matches_encoder_on_grid():
    xs = np.linspace(0.0, 10.0, 2001)
    counts = encode_counts(xs.astype(np.float32), np.float32(1.0)).counts
    for x, c in zip(xs, counts):
        assert if_simulate(float(x), 1.0, 16) == c


def test_if_negative_branch_by_magnitude():
    xs = np.linspace(-10.0, 0.0, 501)
    counts = encode_counts(xs.astype(np.float32), np.float32(1.0)).counts
    for x, c in zip(xs, counts):
        assert -if_simulate(abs(float(x)), 1.0, 16) == c


def test_hard_reset_never_beats_soft():
    for x in (0.3, 1.0, 2.7, 5.5, 9.9):
        soft = if_simulate(x, 1.0, 16, NeuronParams(reset="soft"))
        hard = if_simulate(x, 1.0, 16, NeuronParams(reset="hard"))
        assert hard <= soft


def test_leaky_neuron_spikes_at_most_as_much():
    for x in (2.7, 5.5, 9.9):
        leaky = if_simulate(x, 1.0, 32, NeuronParams(decay=0.9))
        assert leaky <= if_simulate(x, 1.0, 32)


def test_neuron_params_validation():
    with pytest.raises(DomainError):
        NeuronParams(decay=0.0)
    with pytest.raises(DomainError):
        NeuronParams(reset="clamp")
    with pytest.raises(DomainError):
        if_simulate(1.0, 1.0, 0)
    # a fixed threshold overrides the call-site value
    assert if_simulate(4.0, 1.0, 10, NeuronParams(v_th_fixed=2.0)) == 2


# --------------------------------------------------------------------------- #
# Expansion and collapse
# --------------------------------------------------------------------------- #
def test_expand_examples():
    train = expand(np.array([256]), "binary")
    assert train.timesteps == 256 and train.events.sum() == 256

    remapped, offset = symmetric_remap(np.array([0, 256]))
    assert offset == 128
    assert expand(remapped, "ternary").timesteps == 128

    train = expand(np.array([255]), "bitwise_pure", bits=8)
    assert train.timesteps == 8

    train = expand(np.array([-3]), "ternary")
    assert train.events.tolist() == [[-1, -1, -1]]

    train = expand(np.array([5]), "bitwise_pure", bits=8)
    assert train.events.tolist() == [[1, 0, 1, 0, 0, 0, 0, 0]]


def test_expand_scheme_errors():
    with pytest.raises(SchemeError):
        expand(np.array([-1]), "binary")
    with pytest.raises(SchemeError):
        expand(np.array([256]), "bitwise_pure", bits=8)
    with pytest.raises(SchemeError):
        expand(np.array([-129]), "bitwise_twos", bits=8)
    with pytest.raises(SchemeError):
        expand(np.array([128]), "bitwise_twos", bits=8)
    with pytest.raises(SchemeError):
        expand(np.array([256]), "bitwise_bidir", bits=8)  # needs the 2^8 digit
    with pytest.raises(SchemeError):
        expand(np.array([3]), "bitwise_pure")
    with pytest.raises(SchemeError):
        expand(np.array([1]), "morse")
    with pytest.raises(DomainError):
        expand(np.array([1.5]), "binary")


def test_all_zero_train_collapses_to_zero():
    train = expand(np.zeros(5, dtype=np.int64), "ternary")
    assert train.timesteps == 0
    np.testing.assert_array_equal(collapse(train), np.zeros(5, dtype=np.int64))


def test_collapse_rejects_malformed_events():
    train = expand(np.array([3, 1]), "binary")
    train.events[0, 0] = 2
    with pytest.raises(SchemeError):
        collapse(train)
    tern = expand(np.array([-2, 2]), "ternary")
    tern.events[0, 0] = -3
    with pytest.raises(SchemeError):
        collapse(tern)


def test_naf_digits_are_nonadjacent():
    for c in range(-127, 128):
        train = expand(np.array([c]), "bitwise_bidir", bits=8)
        digits = train.events[0]
        for j in range(7):
            assert not (digits[j] != 0 and digits[j + 1] != 0), (c, digits)


def test_twos_complement_top_bit_is_negative():
    train = expand(np.array([-1]), "bitwise_twos", bits=8)
    assert train.events.tolist() == [[1, 1, 1, 1, 1, 1, 1, 1]]
    np.testing.assert_array_equal(collapse(train), [-1])


@given(st.lists(st.integers(min_value=0, max_value=255), min_size=1, max_size=32))
@settings(max_examples=60, deadline=None)
def test_roundtrip_binary_and_pure(values):
    counts = np.array(values, dtype=np.int64)
    np.testing.assert_array_equal(collapse(expand(counts, "binary")), counts)
    np.testing.assert_array_equal(collapse(expand(counts, "bitwise_pure", bits=8)), counts)


@given(st.lists(st.integers(min_value=-127, max_value=127), min_size=1, max_size=32))
@settings(max_examples=60, deadline=None)
def test_roundtrip_signed_schemes(values):
    counts = np.array(values, dtype=np.int64)
    for scheme in ("ternary", "bitwise_bidir", "bitwise_twos"):
        bits = 8 if scheme.startswith("bitwise") else None
        np.testing.assert_array_equal(collapse(expand(counts, scheme, bits=bits)), counts)


def test_roundtrip_preserves_shape(rng):
    counts = rng.integers(-20, 21, size=(4, 6))
    train = expand(counts, "ternary")
    assert collapse(train).shape == (4, 6)


def test_sparsity_ordering_for_counts_at_least_two(rng):
    counts = rng.integers(2, 128, size=256)
    binary_events = np.abs(expand(counts, "binary").events).sum()
    ternary_events = np.abs(expand(counts, "ternary").events).sum()
    bitwise_events = np.abs(expand(counts, "bitwise_pure", bits=8).events).sum()
    assert binary_events >= ternary_events >= bitwise_events


def test_symmetric_remap_halves_event_mass(rng):
    # Binomial counts concentrate near the midpoint, so centering cuts the
    # per-channel event totals by far more than half.
    counts = rng.binomial(128, 0.5, size=2048)
    binary_events = int(np.abs(expand(counts, "binary").events).sum())
    remapped, offset = symmetric_remap(counts)
    ternary_events = int(np.abs(expand(remapped, "ternary").events).sum())
    assert ternary_events <= binary_events / 2
    np.testing.assert_array_equal(remapped + offset, counts)


# --------------------------------------------------------------------------- #
# Spike-driven projection
# --------------------------------------------------------------------------- #
def test_projection_of_silence_is_zero(rng):
    w = rng.standard_normal((8, 16)).astype(np.float32)
    sct = encode_activations(np.zeros(16, dtype=np.float32), k=1.0)
    np.testing.assert_array_equal(spike_project(w, sct), np.zeros(8, dtype=np.float32))


def test_identity_projection_reconstructs(rng):
    x = rng.standard_normal(16).astype(np.float32)
    sct = encode_activations(x, k=4.0)
    y = spike_project(np.eye(16, dtype=np.float32), sct)
    np.testing.assert_allclose(y, sct.reconstruct(), rtol=1e-6)


@pytest.mark.parametrize("scheme,bits", [("ternary", None), ("bitwise_bidir", 8), ("bitwise_twos", 8)])
def test_dual_path_projection_bit_exact(rng, scheme, bits):
    x = rng.standard_normal((5, 16)).astype(np.float32)
    w = rng.standard_normal((8, 16)).astype(np.float32)
    sct = encode_activations(x, k=4.0)
    train = expand(sct, scheme, bits=bits)
    np.testing.assert_array_equal(
        spike_project(w, sct), spike_project_expanded(w, sct, train)
    )


def test_projection_shape_mismatch(rng):
    w = rng.standard_normal((8, 12)).astype(np.float32)
    sct = encode_activations(rng.standard_normal(16).astype(np.float32), k=1.0)
    with pytest.raises(DimensionError):
        spike_project(w, sct)
