"""
Damage Interrogation Engine
Normalized deviation spectra, cumulative average deltas, damage indices,
threshold detection, localization and threshold calibration
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from adi_service.baseline import Baseline, Pair, SignatureSet, validate_signature_compatibility
from adi_service.config import config
from adi_service.errors import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    LocalizationUndefinedError,
)
from adi_service.spectral import TransferFunction, wrap_phase

logger = logging.getLogger(__name__)

MIN_CAD_BINS = 8


@dataclass(frozen=True, eq=False)
class DeviationSpectrum:
    """Signed deviation from baseline in baseline standard deviations"""

    actuator_id: int
    sensor_id: int
    freqs_hz: np.ndarray
    z_mag: np.ndarray
    z_phase: np.ndarray

    @property
    def pair(self) -> Pair:
        return (self.actuator_id, self.sensor_id)


@dataclass(frozen=True, eq=False)
class SmoothedDeviation:
    """Centered moving mean of |z| per channel"""

    actuator_id: int
    sensor_id: int
    freqs_hz: np.ndarray
    mag: np.ndarray
    phase: np.ndarray
    window_bins: int

    @property
    def pair(self) -> Pair:
        return (self.actuator_id, self.sensor_id)


@dataclass(frozen=True)
class CadResult:
    actuator_id: int
    sensor_id: int
    cad_mag: float
    cad_phase: float
    band: Tuple[float, float]
    window_bins: int

    @property
    def pair(self) -> Pair:
        return (self.actuator_id, self.sensor_id)

    @property
    def combined(self) -> float:
        return (self.cad_mag + self.cad_phase) / 2


@dataclass(frozen=True, eq=False)
class DamageIndexVector:
    di: Dict[int, float]
    per_pair_cads: Dict[Pair, CadResult]
    baseline_id: str = "baseline"
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @property
    def transducer_ids(self) -> List[int]:
        return sorted(self.di)

    @property
    def max_di(self) -> float:
        return max(self.di.values())


@dataclass(frozen=True, eq=False)
class Diagnosis:
    detected: bool
    threshold: float
    di_vector: DamageIndexVector
    location_argmax: Optional[int] = None
    location_estimate: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ThresholdCalibration:
    threshold: float
    roc: pd.DataFrame
    min_cost: float
    false_alarm_cost: float
    miss_cost: float


def normalized_deviation(tf: TransferFunction, baseline: Baseline) -> DeviationSpectrum:
    """z-scores of one transfer function against its baseline pair"""
    stats = baseline[tf.pair]
    if tf.freqs_hz.shape != baseline.freqs_hz.shape or not np.allclose(
        tf.freqs_hz, baseline.freqs_hz, rtol=1e-12, atol=0.0
    ):
        raise DataError(
            f"pair {tf.pair}: frequency grid ({tf.n_bins} bins) does not match "
            f"baseline '{baseline.baseline_id}' ({baseline.freqs_hz.shape[0]} bins)"
        )

    z_mag = (tf.magnitude - stats.mag_mean) / stats.mag_std
    z_phase = wrap_phase(tf.phase_rad - stats.phase_mean_rad) / stats.phase_std_rad
    if not (np.all(np.isfinite(z_mag)) and np.all(np.isfinite(z_phase))):
        raise DataError(f"pair {tf.pair}: non-finite deviation values")

    return DeviationSpectrum(
        actuator_id=tf.actuator_id,
        sensor_id=tf.sensor_id,
        freqs_hz=tf.freqs_hz,
        z_mag=z_mag,
        z_phase=z_phase,
    )


def windowed_average(dev: DeviationSpectrum, window_bins: int = config.WINDOW_BINS) -> SmoothedDeviation:
    """Centered moving mean of |z|; edge bins average over the bins available"""
    n_bins = dev.freqs_hz.shape[0]
    if int(window_bins) != window_bins or window_bins < 1 or window_bins % 2 == 0:
        raise ConfigurationError(f"window_bins must be a positive odd integer (got {window_bins})")
    if window_bins > n_bins:
        raise ConfigurationError(f"window_bins {window_bins} exceeds the {n_bins}-bin grid")

    abs_mag = np.abs(dev.z_mag)
    abs_phase = np.abs(dev.z_phase)
    if window_bins == 1:
        smoothed_mag, smoothed_phase = abs_mag, abs_phase
    else:
        rolling = dict(window=int(window_bins), center=True, min_periods=1)
        smoothed_mag = pd.Series(abs_mag).rolling(**rolling).mean().to_numpy()
        smoothed_phase = pd.Series(abs_phase).rolling(**rolling).mean().to_numpy()

    return SmoothedDeviation(
        actuator_id=dev.actuator_id,
        sensor_id=dev.sensor_id,
        freqs_hz=dev.freqs_hz,
        mag=smoothed_mag,
        phase=smoothed_phase,
        window_bins=int(window_bins),
    )


def cumulative_average_delta(
    smoothed: SmoothedDeviation,
    band: Optional[Tuple[float, float]] = None,
) -> CadResult:
    """Band mean of the smoothed absolute deviation, in standard deviations"""
    freqs = smoothed.freqs_hz
    if band is None:
        band = (float(freqs[0]), float(freqs[-1]))
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    n_in_band = int(in_band.sum())
    if n_in_band == 0:
        raise ConfigurationError(f"band {band} does not intersect the frequency grid")
    if n_in_band < MIN_CAD_BINS:
        raise ConfigurationError(
            f"band {band} covers {n_in_band} bins, need at least {MIN_CAD_BINS}"
        )

    return CadResult(
        actuator_id=smoothed.actuator_id,
        sensor_id=smoothed.sensor_id,
        cad_mag=float(np.mean(smoothed.mag[in_band])),
        cad_phase=float(np.mean(smoothed.phase[in_band])),
        band=(float(band[0]), float(band[1])),
        window_bins=smoothed.window_bins,
    )


def damage_index(
    cads: Iterable[CadResult],
    baseline_id: str = "baseline",
    timestamp: Optional[datetime] = None,
) -> DamageIndexVector:
    """Average each actuator's magnitude and phase CADs over its sensors"""
    by_pair: Dict[Pair, CadResult] = {}
    for cad in cads:
        if cad.pair in by_pair:
            raise DataError(f"duplicate CAD for pair {cad.pair}")
        by_pair[cad.pair] = cad
    if not by_pair:
        raise DataError("no CAD results supplied")

    transducers = sorted({t for pair in by_pair for t in pair})
    actuators = sorted({a for a, _ in by_pair})

    di: Dict[int, float] = {}
    for actuator in actuators:
        combined = []
        for sensor in transducers:
            if sensor == actuator:
                continue
            if (actuator, sensor) not in by_pair:
                raise DataError(f"missing CAD for pair ({actuator}, {sensor})")
            combined.append(by_pair[(actuator, sensor)].combined)
        if not combined:
            raise DataError(f"actuator {actuator} has no sensor pairs")
        di[actuator] = float(np.mean(combined))

    return DamageIndexVector(
        di=di,
        per_pair_cads=by_pair,
        baseline_id=baseline_id,
        timestamp=timestamp or datetime.now(timezone.utc),
    )


def interrogate(
    signatures: SignatureSet,
    baseline: Baseline,
    window_bins: int = config.WINDOW_BINS,
    band: Optional[Tuple[float, float]] = None,
    timestamp: Optional[datetime] = None,
) -> DamageIndexVector:
    """
    Full interrogation cycle against a baseline

    Args:
        signatures: Current cycle's transfer functions
        baseline: Reference statistics (healthy or re-baselined)
        window_bins: Odd moving-average width in bins
        band: CAD integration band; whole grid when None

    Returns:
        DamageIndexVector for every actuating transducer

    Raises:
        DataError: the cycle's pairs or frequency grid differ from the baseline's
    """
    compatibility = validate_signature_compatibility(baseline, signatures)
    if not compatibility.ok:
        raise DataError(
            f"signature set '{signatures.label}' does not match baseline '{baseline.baseline_id}': "
            + "; ".join(compatibility.discrepancies)
        )

    cads = []
    for tf in signatures:
        smoothed = windowed_average(normalized_deviation(tf, baseline), window_bins)
        cads.append(cumulative_average_delta(smoothed, band))

    div = damage_index(cads, baseline_id=baseline.baseline_id, timestamp=timestamp)
    logger.info(
        f"🔍 Interrogated '{signatures.label}' against '{baseline.baseline_id}': "
        + ", ".join(f"DI#{t}={v:.2f}" for t, v in sorted(div.di.items()))
    )
    return div


def localize_argmax(div: DamageIndexVector) -> int:
    """Transducer with the largest DI; lowest index wins exact ties"""
    if not div.di:
        raise DataError("damage index vector is empty")
    return min(div.di, key=lambda transducer: (-div.di[transducer], transducer))


def detect(div: DamageIndexVector, threshold: float = config.DETECTION_THRESHOLD) -> Diagnosis:
    """Threshold the largest damage index"""
    if not threshold > 0:
        raise ConfigurationError(f"threshold must be > 0 (got {threshold})")
    if not div.di:
        raise DataError("damage index vector is empty")

    detected = div.max_di >= threshold
    return Diagnosis(
        detected=detected,
        threshold=float(threshold),
        di_vector=div,
        location_argmax=localize_argmax(div) if detected else None,
    )


def localize_weighted(
    div: DamageIndexVector,
    positions: Mapping[int, float],
    null_level: float = config.NULL_LEVEL,
    exponent: float = 2.0,
) -> float:
    """
    Weighted centroid of transducer positions

    Weights are max(DI - null_level, 0) ** exponent. Raises
    LocalizationUndefinedError when fewer than two weights are positive.
    """
    if not exponent > 0:
        raise ConfigurationError(f"exponent must be > 0 (got {exponent})")

    weights = []
    coords = []
    for transducer, value in sorted(div.di.items()):
        excess = value - null_level
        if excess <= 0:
            continue
        if transducer not in positions:
            raise DataError(f"no position given for transducer {transducer}")
        weights.append(excess ** exponent)
        coords.append(float(positions[transducer]))

    if len(weights) < 2:
        raise LocalizationUndefinedError(
            f"{len(weights)} transducer(s) above null level {null_level}; centroid undefined"
        )

    w = np.asarray(weights)
    return float(np.dot(w, coords) / w.sum())


def diagnose(
    div: DamageIndexVector,
    threshold: float = config.DETECTION_THRESHOLD,
    positions: Optional[Mapping[int, float]] = None,
    null_level: float = config.NULL_LEVEL,
    exponent: float = 2.0,
) -> Diagnosis:
    """Detection plus both localization estimates"""
    diagnosis = detect(div, threshold)
    if not diagnosis.detected or positions is None:
        return diagnosis

    try:
        estimate = localize_weighted(div, positions, null_level=null_level, exponent=exponent)
    except LocalizationUndefinedError as e:
        logger.warning(f"⚠️ Weighted localization undefined ({e}); using argmax transducer position")
        estimate = float(positions[diagnosis.location_argmax])

    return Diagnosis(
        detected=True,
        threshold=diagnosis.threshold,
        di_vector=div,
        location_argmax=diagnosis.location_argmax,
        location_estimate=estimate,
    )


def calibrate_threshold(
    healthy_dis: Sequence[float],
    damaged_dis: Sequence[float],
    false_alarm_cost: float = 1.0,
    miss_cost: float = 1.0,
) -> ThresholdCalibration:
    """
    Choose the detection threshold minimizing
    false_alarm_cost * FAR + miss_cost * (1 - PD)

    Args:
        healthy_dis: DI maxima of reference-state runs
        damaged_dis: DI maxima of damaged runs
        false_alarm_cost: Weight of the false alarm rate
        miss_cost: Weight of the missed detection rate

    Returns:
        ThresholdCalibration with the ROC table swept at every distinct sample value
    """
    healthy = np.asarray(list(healthy_dis), dtype=float)
    damaged = np.asarray(list(damaged_dis), dtype=float)
    if healthy.size == 0 or damaged.size == 0:
        raise InsufficientDataError("threshold calibration needs at least one healthy and one damaged sample")
    if not (false_alarm_cost > 0 and miss_cost > 0):
        raise ConfigurationError("false_alarm_cost and miss_cost must be > 0")

    candidates = np.unique(np.concatenate([healthy, damaged]))
    pd_values = np.array([np.mean(damaged >= t) for t in candidates])
    far_values = np.array([np.mean(healthy >= t) for t in candidates])
    costs = false_alarm_cost * far_values + miss_cost * (1.0 - pd_values)

    roc = pd.DataFrame({
        'threshold': candidates,
        'pd': pd_values,
        'far': far_values,
        'cost': costs,
    })

    best = int(np.argmin(costs))
    min_cost = float(costs[best])
    if min_cost == 0.0:
        # Every threshold in (max healthy, min damaged] separates perfectly
        threshold = float((healthy.max() + damaged.min()) / 2)
    else:
        threshold = float(candidates[best])

    logger.info(
        f"📊 Calibrated threshold {threshold:.3f} (PD={pd_values[best]:.2f}, "
        f"FAR={far_values[best]:.2f}, cost={min_cost:.3f})"
    )
    return ThresholdCalibration(
        threshold=threshold,
        roc=roc,
        min_cost=min_cost,
        false_alarm_cost=float(false_alarm_cost),
        miss_cost=float(miss_cost),
    )
