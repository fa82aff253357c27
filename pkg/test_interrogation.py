#!/usr/bin/env python3
"""
Test Damage Interrogation
Deviation spectra, smoothing, CADs, damage indices, detection,
localization and threshold calibration
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

import logging

import numpy as np
import pytest

from adi_service.baseline import SignatureSet, accumulate_baseline
from adi_service.errors import ConfigurationError, DataError, LocalizationUndefinedError
from adi_service.interrogation import (
    CadResult,
    DamageIndexVector,
    DeviationSpectrum,
    SmoothedDeviation,
    calibrate_threshold,
    cumulative_average_delta,
    damage_index,
    detect,
    diagnose,
    interrogate,
    localize_argmax,
    localize_weighted,
    normalized_deviation,
    windowed_average,
)
from adi_service.spectral import TransferFunction

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

FREQS = np.linspace(300.0, 1500.0, 64)
TRANSDUCERS = [1, 2, 3]

# Damage indices of two healthy and nine damaged cases, with the detection
# and location outcome expected at threshold 2.0
DECISION_TABLE = [
    ("1", [0.7, 0.7, 0.7, 0.7], False, None),
    ("2", [1.0, 1.0, 0.9, 0.9], False, None),
    ("3", [2.8, 2.7, 2.3, 2.4], True, 1),
    ("4", [4.1, 3.9, 3.6, 3.6], True, 1),
    ("5", [19.1, 13.4, 12.7, 11.4], True, 1),
    ("6", [22.8, 17.1, 16.2, 14.0], True, 1),
    ("7", [24.6, 21.7, 19.3, 16.4], True, 1),
    ("8", [35.2, 56.4, 36.6, 43.9], True, 2),
    ("9", [8.6, 10.4, 9.7, 6.8], True, 2),
    ("10", [11.3, 15.6, 13.3, 10.1], True, 2),
    ("11", [28.1, 54.3, 34.5, 40.5], True, 2),
]


def random_set(rng, mag_offset=0.0, phase_offset=0.0, scale=1.0, label=""):
    tfs = []
    for a in TRANSDUCERS:
        for s in TRANSDUCERS:
            if a == s:
                continue
            shape = 1.0 + 0.5 * np.sin(FREQS / (100.0 * a + 30.0 * s))
            tfs.append(TransferFunction(
                actuator_id=a,
                sensor_id=s,
                freqs_hz=FREQS,
                magnitude=scale * (shape + mag_offset + 0.01 * rng.standard_normal(FREQS.size)),
                phase_rad=np.angle(np.exp(1j * (0.3 * a + phase_offset + 0.01 * rng.standard_normal(FREQS.size)))),
                coherence=np.ones(FREQS.size),
            ))
    return SignatureSet.from_transfer_functions(tfs, label=label)


@pytest.fixture
def baseline_sets():
    rng = np.random.default_rng(12)
    return [random_set(rng, label=f"ref{i}") for i in range(13)]


def di_vector(values):
    return DamageIndexVector(di={i + 1: v for i, v in enumerate(values)}, per_pair_cads={})


def test_baseline_mean_gives_zero_deviation(baseline_sets):
    baseline = accumulate_baseline(baseline_sets)
    mean = baseline.mean_signature()
    for tf in mean:
        dev = normalized_deviation(tf, baseline)
        np.testing.assert_array_equal(dev.z_mag, 0.0)
        np.testing.assert_array_equal(dev.z_phase, 0.0)

    div = interrogate(mean, baseline)
    assert all(v == 0.0 for v in div.di.values())


def test_deviation_rejects_foreign_grid(baseline_sets):
    baseline = accumulate_baseline(baseline_sets)
    tf = baseline_sets[0][(1, 2)]
    shifted = TransferFunction(1, 2, tf.freqs_hz + 1.0, tf.magnitude, tf.phase_rad, tf.coherence)
    with pytest.raises(DataError):
        normalized_deviation(shifted, baseline)


def _deviation(z_mag, z_phase=None):
    z_mag = np.asarray(z_mag, dtype=float)
    freqs = np.arange(z_mag.size, dtype=float)
    return DeviationSpectrum(1, 2, freqs, z_mag, np.asarray(z_phase if z_phase is not None else z_mag, dtype=float))


def test_windowed_average_edges_and_identity():
    dev = _deviation([1.0, -2.0, 3.0, -4.0, 5.0])
    np.testing.assert_array_equal(windowed_average(dev, 1).mag, [1.0, 2.0, 3.0, 4.0, 5.0])
    np.testing.assert_allclose(windowed_average(dev, 3).mag, [1.5, 2.0, 3.0, 4.0, 4.5])

    constant = windowed_average(_deviation(np.full(20, -2.0)), 9)
    np.testing.assert_allclose(constant.mag, 2.0)
    np.testing.assert_allclose(constant.phase, 2.0)


def test_windowed_average_rejects_bad_windows():
    dev = _deviation(np.ones(10))
    with pytest.raises(ConfigurationError):
        windowed_average(dev, 4)
    with pytest.raises(ConfigurationError):
        windowed_average(dev, 0)
    with pytest.raises(ConfigurationError):
        windowed_average(dev, 11)


def test_cad_constant_and_band_limits():
    smoothed = SmoothedDeviation(1, 2, np.arange(40, dtype=float), np.full(40, 3.0), np.full(40, 1.0), 9)
    cad = cumulative_average_delta(smoothed)
    assert cad.cad_mag == pytest.approx(3.0)
    assert cad.cad_phase == pytest.approx(1.0)
    assert cad.combined == pytest.approx(2.0)

    assert cumulative_average_delta(smoothed, (10.0, 20.0)).cad_mag == pytest.approx(3.0)
    with pytest.raises(ConfigurationError):
        cumulative_average_delta(smoothed, (10.0, 14.0))
    with pytest.raises(ConfigurationError):
        cumulative_average_delta(smoothed, (100.0, 200.0))


def test_damage_index_averages_over_sensors():
    cads = [
        CadResult(1, 2, 2.0, 4.0, (0, 1), 9),
        CadResult(1, 3, 4.0, 6.0, (0, 1), 9),
        CadResult(2, 1, 1.0, 1.0, (0, 1), 9),
        CadResult(2, 3, 1.0, 3.0, (0, 1), 9),
        CadResult(3, 1, 0.5, 0.5, (0, 1), 9),
        CadResult(3, 2, 0.5, 0.5, (0, 1), 9),
    ]
    div = damage_index(cads, baseline_id="ref")
    assert div.di == {1: 4.0, 2: 1.5, 3: 0.5}
    assert div.baseline_id == "ref"

    with pytest.raises(DataError):
        damage_index(cads[:-1])
    with pytest.raises(DataError):
        damage_index(cads + [cads[0]])


def test_decision_table_replay():
    for label, values, detected, location in DECISION_TABLE:
        diagnosis = detect(di_vector(values), 2.0)
        assert diagnosis.detected is detected, label
        assert diagnosis.location_argmax == location, label


def test_argmax_ties_go_to_lowest_index():
    assert localize_argmax(di_vector([3.0, 5.0, 5.0, 1.0])) == 2
    assert localize_argmax(di_vector([2.0, 2.0])) == 1


def test_detect_threshold_is_inclusive():
    assert detect(di_vector([2.0, 1.0]), 2.0).detected
    with pytest.raises(ConfigurationError):
        detect(di_vector([1.0]), 0.0)


def test_weighted_centroid():
    div = di_vector([19.1, 13.4, 12.7, 11.4])
    positions = {1: 0.0, 2: 1.0, 3: 2.0, 4: 3.0}
    assert localize_weighted(div, positions) == pytest.approx(779.06 / 747.62, rel=1e-9)

    with pytest.raises(LocalizationUndefinedError):
        localize_weighted(di_vector([5.0, 0.5, 0.6, 0.7]), positions)


def test_diagnose_falls_back_to_argmax_position():
    positions = {1: 0.0, 2: 0.12, 3: 0.24, 4: 0.36}
    diagnosis = diagnose(di_vector([0.5, 0.6, 9.0, 0.7]), 2.0, positions)
    assert diagnosis.location_argmax == 3
    assert diagnosis.location_estimate == pytest.approx(0.24)

    healthy = diagnose(di_vector([0.7, 0.7, 0.7, 0.7]), 2.0, positions)
    assert not healthy.detected
    assert healthy.location_estimate is None


def test_diagnosis_is_scale_invariant(baseline_sets):
    rng = np.random.default_rng(40)
    current = random_set(rng, mag_offset=0.05, phase_offset=0.02)
    plain = interrogate(current, accumulate_baseline(baseline_sets))

    rng = np.random.default_rng(40)
    scaled_current = random_set(rng, mag_offset=0.05, phase_offset=0.02, scale=7.0)
    scaled_sets = [
        SignatureSet.from_transfer_functions(
            [TransferFunction(tf.actuator_id, tf.sensor_id, tf.freqs_hz, 7.0 * tf.magnitude, tf.phase_rad, tf.coherence)
             for tf in signatures],
            label=signatures.label,
        )
        for signatures in baseline_sets
    ]
    scaled = interrogate(scaled_current, accumulate_baseline(scaled_sets))

    for transducer in TRANSDUCERS:
        assert scaled.di[transducer] == pytest.approx(plain.di[transducer], rel=1e-9)
    assert detect(scaled).detected == detect(plain).detected


def test_phase_wrap_invariance(baseline_sets):
    baseline = accumulate_baseline(baseline_sets)
    rng = np.random.default_rng(5)
    current = random_set(rng, phase_offset=0.1)
    turned = SignatureSet.from_transfer_functions(
        [TransferFunction(tf.actuator_id, tf.sensor_id, tf.freqs_hz, tf.magnitude, tf.phase_rad + 2 * np.pi, tf.coherence)
         for tf in current]
    )
    plain = interrogate(current, baseline)
    shifted = interrogate(turned, baseline)
    for transducer in TRANSDUCERS:
        assert shifted.di[transducer] == pytest.approx(plain.di[transducer], abs=1e-12)


def test_interrogation_detects_offset(baseline_sets):
    baseline = accumulate_baseline(baseline_sets)
    rng = np.random.default_rng(99)
    assert not detect(interrogate(random_set(rng), baseline)).detected
    assert detect(interrogate(random_set(rng, mag_offset=0.2), baseline)).detected


def test_interrogate_rejects_incompatible_cycle(baseline_sets):
    baseline = accumulate_baseline(baseline_sets)
    rng = np.random.default_rng(3)
    full = random_set(rng, label="partial")
    partial = SignatureSet.from_transfer_functions(
        [tf for tf in full if tf.actuator_id in (1, 2)], label="partial"
    )
    with pytest.raises(DataError, match="missing pair") as excinfo:
        interrogate(partial, baseline)
    assert "partial" in str(excinfo.value)

    shifted = SignatureSet.from_transfer_functions(
        [TransferFunction(tf.actuator_id, tf.sensor_id, tf.freqs_hz + 1.0, tf.magnitude, tf.phase_rad, tf.coherence)
         for tf in full]
    )
    with pytest.raises(DataError):
        interrogate(shifted, baseline)


def test_cad_of_standard_normal_deviation_is_half_normal_mean():
    rng = np.random.default_rng(2024)
    freqs = np.arange(4096, dtype=float)
    cads = []
    for _ in range(200):
        dev = DeviationSpectrum(1, 2, freqs, rng.standard_normal(freqs.size), rng.standard_normal(freqs.size))
        cads.append(cumulative_average_delta(windowed_average(dev, 1)).cad_mag)
    # E|Z| = sqrt(2 / pi)
    assert np.mean(cads) == pytest.approx(np.sqrt(2 / np.pi), abs=0.05)


def test_calibration_separable():
    healthy = [0.7, 1.0]
    damaged = [2.8, 4.1, 19.1, 22.8, 24.6, 56.4, 10.4, 15.6, 54.3]
    calibration = calibrate_threshold(healthy, damaged)

    assert calibration.threshold == pytest.approx(1.9)
    assert calibration.min_cost == 0.0
    perfect = calibration.roc[(calibration.roc['pd'] == 1.0) & (calibration.roc['far'] == 0.0)]
    assert len(perfect) >= 1
    assert list(calibration.roc.columns) == ['threshold', 'pd', 'far', 'cost']


def test_calibration_overlapping_picks_lowest_minimum():
    calibration = calibrate_threshold([1.0, 3.0], [2.0, 4.0])
    assert calibration.min_cost == pytest.approx(0.5)
    assert calibration.threshold == pytest.approx(2.0)


def test_calibration_degenerate_tables():
    same = calibrate_threshold([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(same.roc['pd'], same.roc['far'])

    single = calibrate_threshold([1.0], [3.0])
    assert len(single.roc) == 2
    assert single.threshold == pytest.approx(2.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
