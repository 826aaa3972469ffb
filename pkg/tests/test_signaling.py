import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from sensefed.errors import ContractViolation, ParameterError
from sensefed.signaling import (
    AggregationWeights,
    BlockStats,
    PrecoderSet,
    PulseBook,
    destandardize,
    dft_pulses,
    encode_symbol,
    hadamard_pulses,
    make_weights,
    random_precoders,
    standardize,
    transmit_signal,
)


def test_dft_book_matches_direct_dft():
    book = dft_pulses(4, 4)
    assert np.allclose(book.pulses, scipy.linalg.dft(4), atol=1e-12)


def test_dft_single_sample_phase():
    book = dft_pulses(2, 4)
    assert np.isclose(book.pulses[1, 1], np.exp(-1j * np.pi / 2), atol=1e-12)


def test_dft_orthogonality_default_size():
    book = dft_pulses(15, 16)
    gram = book.cross_correlations()
    off = gram - np.diag(np.diagonal(gram))
    assert np.max(np.abs(off)) < 1e-9
    assert np.allclose(np.diagonal(gram).real, 16.0, atol=1e-9)
    assert np.max(np.abs(np.abs(book.pulses) - 1.0)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=32), st.integers(min_value=0, max_value=32))
def test_dft_orthogonality_property(k, extra):
    t = k + extra
    gram = dft_pulses(k, t).cross_correlations()
    off = gram - np.diag(np.diagonal(gram))
    assert np.max(np.abs(off)) < 1e-8 * t


def test_hadamard_orthogonality():
    book = hadamard_pulses(15, 16)
    gram = book.cross_correlations()
    off = gram - np.diag(np.diagonal(gram))
    assert np.max(np.abs(off)) < 1e-12
    with pytest.raises(ParameterError):
        hadamard_pulses(5, 12)


def test_pulse_length_must_cover_devices():
    with pytest.raises(ParameterError):
        dft_pulses(10, 8)


def test_pulse_book_rejects_non_unit_modulus():
    with pytest.raises(ContractViolation):
        PulseBook(pulses=np.array([[1.0, 0.5]], dtype=complex))


def test_standardize_round_trip():
    rng = np.random.default_rng(0)
    block = rng.normal(3.0, 2.5, size=64)
    std, stats = standardize(block)
    assert abs(np.mean(std)) < 1e-12
    assert abs(np.std(std) - 1.0) < 1e-12
    back = destandardize(std, stats)
    assert np.max(np.abs(back - block)) < 1e-12


def test_standardize_degenerate_block():
    std, stats = standardize(np.full(8, 4.2))
    assert stats.degenerate
    assert np.all(std == 0.0)
    assert np.allclose(destandardize(std, stats), 4.2)


def test_standardize_needs_two_values():
    with pytest.raises(ParameterError):
        standardize(np.array([1.0]))


def test_encode_and_transmit():
    c = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], dtype=complex)
    g = np.array([2.0, -1.0])
    s = encode_symbol(c, g)
    assert np.allclose(s, np.array([2.0, -1.0, 1.0]))
    assert np.allclose(transmit_signal(s, 1.0), s)
    x = transmit_signal(s, np.exp(1j * 0.3))
    assert np.allclose(np.abs(x), np.abs(s))
    with pytest.raises(ContractViolation):
        encode_symbol(c, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ContractViolation):
        transmit_signal(s, 0.7)


def test_transmit_autocovariance_matches_gram():
    # Sample covariance of s = C g over unit-variance draws approaches C C^H.
    rng = np.random.default_rng(5)
    c = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    c *= np.sqrt(1.0 / np.sum(np.abs(c) ** 2))
    draws = 100_000
    g = rng.standard_normal((2, draws))
    s = c @ g
    sample = (s @ np.conj(s).T) / draws
    gram = c @ np.conj(c).T
    assert np.linalg.norm(sample - gram) < 0.05 * np.linalg.norm(gram)


def test_random_precoders_full_power_and_deterministic():
    ps1 = random_precoders(3, 15, 4, 2, power_budget=1.0)
    ps2 = random_precoders(3, 15, 4, 2, power_budget=1.0)
    assert np.array_equal(ps1.C, ps2.C)
    assert np.allclose(ps1.energies, 1.0, atol=1e-12)
    # Columns of the underlying unitary are orthonormal before scaling.
    col_gram = np.conj(ps1.C[0]).T @ ps1.C[0]
    assert np.allclose(col_gram, 0.5 * np.eye(2), atol=1e-12)
    assert np.isclose(np.trace(ps1.gram(0)).real, 1.0, atol=1e-12)


def test_precoder_budget_enforced():
    c = np.zeros((2, 4, 2), dtype=complex)
    c[0, 0, 0] = 2.0  # energy 4 > budget 1
    with pytest.raises(ContractViolation):
        PrecoderSet(C=c, power_budget=1.0)


def test_weights_standard_targets():
    w = make_weights(4, sample_counts=[10, 20, 30, 40])
    assert np.allclose(w.w[:, 0], 1.0)
    assert np.allclose(w.w[:, 1], [0.1, 0.2, 0.3, 0.4])
    assert np.allclose(w.matrix(2), np.diag([1.0, 0.3]))
    lone = make_weights(3, sample_counts=[5, 5, 10], sensing=False)
    assert lone.n_tasks == 1
    assert np.allclose(lone.w[:, 0], [0.25, 0.25, 0.5])
    with pytest.raises(ParameterError):
        make_weights(2, sensing=False, learning=False)


def test_frame_power_tracks_precoder_energy():
    # Average transmit power over standardized frames stays within 5% of ||C||_F^2.
    rng = np.random.default_rng(11)
    ps = random_precoders(1, 1, 4, 2, power_budget=1.0)
    c = ps.C[0]
    frames, frame_len = 50, 16
    total = 0.0
    for _ in range(frames):
        g = np.empty((2, frame_len))
        for i in range(2):
            g[i], _ = standardize(rng.normal(2.0, 1.5, frame_len))
        s = c @ g  # (M, T)
        total += np.mean(np.sum(np.abs(s) ** 2, axis=0))
    assert abs(total / frames - 1.0) < 0.05
