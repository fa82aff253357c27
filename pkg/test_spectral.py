#!/usr/bin/env python3
"""
Test Spectral Estimation
Excitation generation, phase wrapping and H1 transfer function estimates
checked against exact receptances
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

import logging

import numpy as np
import pytest

from adi_service.errors import ConfigurationError, DataError, DomainError, EstimationError
from adi_service.spectral import (
    ExcitationConfig,
    ExcitationKind,
    SpectralParams,
    TimeSeriesRecord,
    TransferFunction,
    band_energy_fraction,
    estimate_transfer_function,
    generate_excitation,
    wrap_phase,
)
from adi_service.structsim import StructureModel, analytic_frf, simulate_response

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

RANDOM = ExcitationKind.BAND_LIMITED_RANDOM


def test_wrap_phase_boundaries():
    assert wrap_phase(-np.pi) == pytest.approx(np.pi)
    assert wrap_phase(np.pi) == pytest.approx(np.pi)
    assert wrap_phase(3 * np.pi) == pytest.approx(np.pi)
    assert wrap_phase(0.0) == 0.0
    assert wrap_phase(2 * np.pi + 0.25) == pytest.approx(0.25, abs=1e-12)


def test_wrap_phase_is_invariant_to_whole_turns():
    rng = np.random.default_rng(7)
    angles = rng.uniform(-3.0, 3.0, size=500)
    for turns in (-3, -1, 1, 4):
        np.testing.assert_allclose(wrap_phase(angles + 2 * np.pi * turns), angles, atol=1e-12)

    wrapped = wrap_phase(rng.uniform(-50, 50, size=500))
    assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)


def test_wrap_phase_rejects_non_finite():
    with pytest.raises(DomainError):
        wrap_phase(np.nan)
    with pytest.raises(DomainError):
        wrap_phase(np.array([0.0, np.inf]))


def test_excitation_config_validation():
    with pytest.raises(ConfigurationError):
        ExcitationConfig(band_low_hz=1500.0, band_high_hz=300.0)
    with pytest.raises(ConfigurationError):
        ExcitationConfig(band_high_hz=2048.0, sample_rate_hz=4096.0)
    with pytest.raises(ConfigurationError):
        ExcitationConfig(duration_s=0.0)
    with pytest.raises(ConfigurationError):
        ExcitationConfig(taper_fraction=1.5)

    excitation = ExcitationConfig(kind="band-limited-random")
    assert excitation.kind is RANDOM
    assert excitation.n_samples == 16384


def test_chirp_concentrates_energy_in_band():
    excitation = ExcitationConfig()
    samples = generate_excitation(excitation)
    assert samples.shape == (excitation.n_samples,)
    assert np.max(np.abs(samples)) <= excitation.amplitude + 1e-12
    assert band_energy_fraction(samples, excitation.sample_rate_hz, excitation_band(excitation)) > 0.95
    # The chirp ignores the seed
    np.testing.assert_array_equal(samples, generate_excitation(excitation, seed=99))


def test_random_excitation_is_band_limited_and_seeded():
    excitation = ExcitationConfig(kind=RANDOM, amplitude=2.0)
    first = generate_excitation(excitation, seed=3)
    again = generate_excitation(excitation, seed=3)
    other = generate_excitation(excitation, seed=4)

    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)
    assert band_energy_fraction(first, excitation.sample_rate_hz, excitation_band(excitation)) > 0.999
    assert np.std(first) == pytest.approx(2.0 / np.sqrt(2), rel=1e-9)


def excitation_band(excitation):
    return (excitation.band_low_hz, excitation.band_high_hz)


def gain_record(gain=2.5, n=16384, fs=4096.0):
    excitation = ExcitationConfig(kind=RANDOM)
    x = generate_excitation(excitation, seed=11)[:n]
    return TimeSeriesRecord(actuator_id=1, sample_rate_hz=fs, excitation=x, responses={2: gain * x})


def test_pure_gain_is_recovered_exactly():
    tf = estimate_transfer_function(gain_record(), 2, SpectralParams())

    assert tf.pair == (1, 2)
    assert tf.freqs_hz[0] >= 300.0 and tf.freqs_hz[-1] <= 1500.0
    np.testing.assert_allclose(tf.magnitude, 2.5, rtol=1e-9)
    np.testing.assert_allclose(tf.phase_rad, 0.0, atol=1e-9)
    np.testing.assert_allclose(tf.coherence, 1.0, atol=1e-9)


def test_estimator_input_errors():
    record = gain_record()
    with pytest.raises(DataError):
        estimate_transfer_function(record, 7, SpectralParams())
    with pytest.raises(DataError):
        estimate_transfer_function(gain_record(n=600), 2, SpectralParams())
    with pytest.raises(ConfigurationError):
        estimate_transfer_function(record, 2, SpectralParams(band_low_hz=300.0, band_high_hz=2100.0))

    silent = TimeSeriesRecord(
        actuator_id=1, sample_rate_hz=4096.0, excitation=np.zeros(4096), responses={2: np.zeros(4096)}
    )
    with pytest.raises(EstimationError):
        estimate_transfer_function(silent, 2, SpectralParams())


def test_spectral_params_validation():
    with pytest.raises(ConfigurationError):
        SpectralParams(segment_length=500)
    with pytest.raises(ConfigurationError):
        SpectralParams(overlap_fraction=1.0)
    assert SpectralParams(segment_length=1024, overlap_fraction=0.5).noverlap == 512


def test_transfer_function_validation():
    freqs = np.array([1.0, 2.0, 3.0])
    with pytest.raises(DataError):
        TransferFunction(1, 2, np.array([1.0, 3.0, 2.0]), np.ones(3), np.zeros(3), np.ones(3))
    with pytest.raises(DataError):
        TransferFunction(1, 2, freqs, -np.ones(3), np.zeros(3), np.ones(3))
    with pytest.raises(DataError):
        TransferFunction(1, 2, freqs, np.ones(3), np.zeros(2), np.ones(3))
    with pytest.raises(DataError):
        TransferFunction(1, 2, freqs, np.ones(3), np.zeros(3), np.full(3, 1.2))
    with pytest.raises(DataError):
        TransferFunction(1, 2, freqs, np.ones(3), np.array([0.0, np.nan, 0.0]), np.ones(3))


def test_transfer_function_stores_principal_phase():
    freqs = np.array([1.0, 2.0, 3.0])
    tf = TransferFunction(1, 2, freqs, np.ones(3), np.array([3 * np.pi, -np.pi, 0.5 + 4 * np.pi]), np.ones(3))
    np.testing.assert_allclose(tf.phase_rad, [np.pi, np.pi, 0.5], atol=1e-12)
    assert np.all((tf.phase_rad > -np.pi) & (tf.phase_rad <= np.pi))


def test_uncorrelated_response_has_low_coherence():
    rng = np.random.default_rng(8)
    x = generate_excitation(ExcitationConfig(kind=RANDOM), seed=11)[:16384]
    record = TimeSeriesRecord(
        actuator_id=1, sample_rate_hz=4096.0, excitation=x, responses={2: rng.standard_normal(x.size)}
    )
    tf = estimate_transfer_function(record, 2, SpectralParams())
    logger.info(f"median coherence of unrelated channels {np.median(tf.coherence):.4f}")
    assert np.median(tf.coherence) < 0.1


@pytest.mark.parametrize("scale", [3.7, -0.4])
def test_estimator_is_linear_in_the_response(scale):
    rng = np.random.default_rng(21)
    x = generate_excitation(ExcitationConfig(kind=RANDOM), seed=11)[:16384]
    y = 1.5 * x + 0.3 * rng.standard_normal(x.size)

    def estimate(response):
        record = TimeSeriesRecord(actuator_id=1, sample_rate_hz=4096.0, excitation=x, responses={2: response})
        return estimate_transfer_function(record, 2, SpectralParams())

    plain = estimate(y)
    scaled = estimate(scale * y)
    np.testing.assert_allclose(scaled.magnitude, abs(scale) * plain.magnitude, rtol=1e-9)
    np.testing.assert_allclose(scaled.coherence, plain.coherence, atol=1e-9)
    turn = 0.0 if scale > 0 else np.pi
    np.testing.assert_allclose(wrap_phase(scaled.phase_rad - plain.phase_rad - turn), 0.0, atol=1e-9)


def test_h1_matches_receptance_on_noiseless_chain():
    model = StructureModel.chain(n_nodes=64, alpha=50.0, beta=1e-4)
    # Drive wider than the analysis band so no analysed bin sits on a spectral edge
    excitation = ExcitationConfig(kind=RANDOM, band_low_hz=200.0, band_high_hz=1700.0)
    params = SpectralParams(segment_length=2048)
    record = simulate_response(model, excitation, actuator_id=1, noise_std=0.0, seed=5)

    tf = estimate_transfer_function(record, 2, params)
    exact = analytic_frf(model, model.transducer_nodes[1], model.transducer_nodes[2], tf.freqs_hz)

    coherent = tf.coherence >= 0.99
    assert coherent.sum() >= tf.n_bins // 2
    relative = np.abs(tf.magnitude - exact.magnitude) / exact.magnitude
    phase_error = np.abs(wrap_phase(tf.phase_rad - exact.phase_rad))
    assert np.max(relative[coherent]) <= 0.01
    assert np.max(phase_error[coherent]) <= 0.02


def test_h1_on_noisy_resonator_within_five_percent():
    resonator = StructureModel(
        masses=np.array([0.01]),
        stiffnesses=np.array([4e4]),
        alpha=200.0,
        beta=0.0,
        transducer_nodes={1: 0},
    )
    excitation = ExcitationConfig(kind=RANDOM, band_low_hz=50.0, band_high_hz=1500.0, duration_s=16.0)
    params = SpectralParams(segment_length=2048, band_low_hz=50.0, band_high_hz=1500.0)
    record = simulate_response(resonator, excitation, actuator_id=1, noise_std=0.05, seed=21)

    tf = estimate_transfer_function(record, 1, params)
    exact = analytic_frf(resonator, 0, 0, tf.freqs_hz)

    coherent = tf.coherence >= 0.99
    assert coherent.sum() >= 20
    relative = np.abs(tf.magnitude - exact.magnitude) / exact.magnitude
    assert np.max(relative[coherent]) <= 0.05


def test_static_gain_model_recovered_through_pipeline():
    model = StructureModel(
        masses=np.array([1e-6]),
        stiffnesses=np.array([1e3]),
        transducer_nodes={1: 0},
    )
    excitation = ExcitationConfig()
    record = simulate_response(model, excitation, actuator_id=1, noise_std=0.0, seed=0)
    tf = estimate_transfer_function(record, 1, SpectralParams())
    exact = analytic_frf(model, 0, 0, tf.freqs_hz)

    np.testing.assert_allclose(tf.magnitude, exact.magnitude, rtol=0.01)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
