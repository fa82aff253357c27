"""
Baseline Statistics for Active Damage Interrogation
Per-bin mean and standard deviation of transfer-function magnitude and phase
over repeated reference-state interrogation cycles
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from adi_service.errors import DataError, InsufficientDataError, UnknownPairError
from adi_service.spectral import TransferFunction, wrap_phase

logger = logging.getLogger(__name__)

MIN_BASELINE_DATASETS = 3

Pair = Tuple[int, int]


@dataclass(frozen=True)
class StdFloorPolicy:
    """Lower bounds applied to baseline standard deviations"""

    mag_relative: float = 1e-6
    mag_absolute: float = 1e-12
    phase_floor_rad: float = 1e-3

    def mag_floor(self, mag_mean: np.ndarray) -> float:
        return max(self.mag_relative * float(np.median(mag_mean)), self.mag_absolute)

    def to_dict(self) -> Dict[str, float]:
        return {
            'mag_relative': self.mag_relative,
            'mag_absolute': self.mag_absolute,
            'phase_floor_rad': self.phase_floor_rad,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'StdFloorPolicy':
        return cls(
            mag_relative=float(values['mag_relative']),
            mag_absolute=float(values['mag_absolute']),
            phase_floor_rad=float(values['phase_floor_rad']),
        )


@dataclass(frozen=True, eq=False)
class SignatureSet:
    """All actuator/sensor transfer functions of one interrogation cycle"""

    transfer_functions: Dict[Pair, TransferFunction]
    label: str = ""

    def __post_init__(self):
        if not self.transfer_functions:
            raise DataError(f"signature set '{self.label}' is empty")

        reference: Optional[np.ndarray] = None
        for pair, tf in self.transfer_functions.items():
            if tuple(pair) != tf.pair:
                raise DataError(f"signature keyed {pair} holds transfer function {tf.pair}")
            if reference is None:
                reference = tf.freqs_hz
            elif not np.array_equal(reference, tf.freqs_hz):
                raise DataError(f"pair {pair} in '{self.label}' is not on the shared frequency grid")

    @classmethod
    def from_transfer_functions(cls, tfs: Sequence[TransferFunction], label: str = "") -> 'SignatureSet':
        return cls({tf.pair: tf for tf in tfs}, label=label)

    def __getitem__(self, pair: Pair) -> TransferFunction:
        try:
            return self.transfer_functions[pair]
        except KeyError:
            raise UnknownPairError(f"pair {pair} not in signature set '{self.label}'") from None

    def __contains__(self, pair: Pair) -> bool:
        return pair in self.transfer_functions

    def __len__(self) -> int:
        return len(self.transfer_functions)

    def __iter__(self) -> Iterator[TransferFunction]:
        for pair in self.pairs:
            yield self.transfer_functions[pair]

    @property
    def pairs(self) -> List[Pair]:
        return sorted(self.transfer_functions)

    @property
    def freqs_hz(self) -> np.ndarray:
        return next(iter(self.transfer_functions.values())).freqs_hz

    @property
    def actuator_ids(self) -> List[int]:
        return sorted({a for a, _ in self.transfer_functions})

    @property
    def transducer_ids(self) -> List[int]:
        ids = set()
        for actuator, sensor in self.transfer_functions:
            ids.update((actuator, sensor))
        return sorted(ids)

    def check_complete(self) -> None:
        """Every actuator must have a pair to every other transducer"""
        transducers = self.transducer_ids
        for actuator in self.actuator_ids:
            for sensor in transducers:
                if sensor != actuator and (actuator, sensor) not in self.transfer_functions:
                    raise DataError(
                        f"signature set '{self.label}' is missing pair ({actuator}, {sensor})"
                    )


@dataclass(frozen=True, eq=False)
class PairStatistics:
    mag_mean: np.ndarray
    mag_std: np.ndarray
    phase_mean_rad: np.ndarray
    phase_std_rad: np.ndarray


@dataclass(frozen=True, eq=False)
class Baseline:
    """Reference-state statistics; the reference need not be pristine"""

    freqs_hz: np.ndarray
    statistics: Dict[Pair, PairStatistics]
    n_datasets: int
    floor_policy: StdFloorPolicy = field(default_factory=StdFloorPolicy)
    baseline_id: str = "baseline"

    def __post_init__(self):
        object.__setattr__(self, 'freqs_hz', np.asarray(self.freqs_hz, dtype=float))
        if self.n_datasets < MIN_BASELINE_DATASETS:
            raise InsufficientDataError(
                f"baseline '{self.baseline_id}' needs at least {MIN_BASELINE_DATASETS} datasets "
                f"(got {self.n_datasets})"
            )
        n_bins = self.freqs_hz.shape[0]
        for pair, stats in self.statistics.items():
            for name in ('mag_mean', 'mag_std', 'phase_mean_rad', 'phase_std_rad'):
                values = getattr(stats, name)
                if np.shape(values) != (n_bins,):
                    raise DataError(f"baseline pair {pair} field {name} does not match the {n_bins}-bin grid")
            if np.any(stats.mag_std <= 0) or np.any(stats.phase_std_rad <= 0):
                raise DataError(f"baseline pair {pair} has non-positive standard deviations")

    def __getitem__(self, pair: Pair) -> PairStatistics:
        try:
            return self.statistics[pair]
        except KeyError:
            raise UnknownPairError(f"pair {pair} not in baseline '{self.baseline_id}'") from None

    @property
    def pairs(self) -> List[Pair]:
        return sorted(self.statistics)

    @property
    def transducer_ids(self) -> List[int]:
        ids = set()
        for actuator, sensor in self.statistics:
            ids.update((actuator, sensor))
        return sorted(ids)

    def mean_signature(self, label: Optional[str] = None) -> SignatureSet:
        """The baseline means as a signature set"""
        tfs = [
            TransferFunction(
                actuator_id=pair[0],
                sensor_id=pair[1],
                freqs_hz=self.freqs_hz,
                magnitude=stats.mag_mean,
                phase_rad=stats.phase_mean_rad,
                coherence=np.ones_like(self.freqs_hz),
            )
            for pair, stats in sorted(self.statistics.items())
        ]
        return SignatureSet.from_transfer_functions(tfs, label=label or f"{self.baseline_id} mean")


@dataclass
class CompatibilityReport:
    ok: bool
    discrepancies: List[str] = field(default_factory=list)
    missing_pairs: List[Pair] = field(default_factory=list)
    extra_pairs: List[Pair] = field(default_factory=list)
    first_differing_freq_hz: Optional[float] = None


def circular_mean(angles: np.ndarray, axis: int = 0) -> np.ndarray:
    """Argument of the mean unit phasor, on (-pi, pi]"""
    phasors = np.exp(1j * np.asarray(angles, dtype=float))
    return wrap_phase(np.angle(np.mean(phasors, axis=axis)))


def wrapped_deviation_std(angles: np.ndarray, mean: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sample std (N-1) of deviations wrapped around ``mean``"""
    deviations = wrap_phase(np.asarray(angles, dtype=float) - mean)
    return np.std(deviations, axis=axis, ddof=1)


def _compare_grids(
    reference_pairs: Sequence[Pair],
    reference_freqs: np.ndarray,
    signatures: SignatureSet,
) -> CompatibilityReport:
    report = CompatibilityReport(ok=True)
    available = set(signatures.transfer_functions)
    expected = set(reference_pairs)

    report.missing_pairs = sorted(expected - available)
    report.extra_pairs = sorted(available - expected)
    for actuator, sensor in report.missing_pairs:
        report.discrepancies.append(f"missing pair (actuator {actuator}, sensor {sensor})")
    for actuator, sensor in report.extra_pairs:
        report.discrepancies.append(f"unexpected pair (actuator {actuator}, sensor {sensor})")

    freqs = signatures.freqs_hz
    if not np.array_equal(reference_freqs, freqs):
        common = min(len(reference_freqs), len(freqs))
        differs = np.nonzero(reference_freqs[:common] != freqs[:common])[0]
        if differs.size:
            k = int(differs[0])
            report.first_differing_freq_hz = float(freqs[k])
            report.discrepancies.append(
                f"frequency grid differs at bin {k}: expected {reference_freqs[k]} Hz, got {freqs[k]} Hz"
            )
        else:
            longer = reference_freqs if len(reference_freqs) > len(freqs) else freqs
            report.first_differing_freq_hz = float(longer[common])
            report.discrepancies.append(
                f"frequency grid length differs: expected {len(reference_freqs)} bins, got {len(freqs)}"
            )

    report.ok = not report.discrepancies
    return report


def validate_signature_compatibility(baseline: Baseline, signatures: SignatureSet) -> CompatibilityReport:
    """Check a signature set against a baseline's pairs and grid; never raises"""
    return _compare_grids(baseline.pairs, baseline.freqs_hz, signatures)


def accumulate_baseline(
    sets: Sequence[SignatureSet],
    floor_params: Optional[StdFloorPolicy] = None,
    baseline_id: str = "baseline",
) -> Baseline:
    """
    Build the baseline from reference-state signature sets

    Args:
        sets: Three or more cycles with identical pairs and grids
        floor_params: Standard deviation floors (defaults to StdFloorPolicy())
        baseline_id: Label carried into damage index vectors and reports

    Returns:
        Baseline with Bessel-corrected magnitude statistics and circular
        phase statistics
    """
    policy = floor_params or StdFloorPolicy()
    if len(sets) < MIN_BASELINE_DATASETS:
        raise InsufficientDataError(
            f"baseline needs at least {MIN_BASELINE_DATASETS} signature sets (got {len(sets)})"
        )

    logger.info(f"📊 Accumulating baseline '{baseline_id}' from {len(sets)} signature sets")

    reference = sets[0]
    reference.check_complete()
    pairs = reference.pairs
    freqs = reference.freqs_hz
    for signatures in sets[1:]:
        report = _compare_grids(pairs, freqs, signatures)
        if not report.ok:
            offending = (report.missing_pairs or report.extra_pairs or signatures.pairs)[0]
            raise DataError(
                f"signature set '{signatures.label}' incompatible at pair {offending}: "
                f"{report.discrepancies[0]}"
            )

    statistics: Dict[Pair, PairStatistics] = {}
    for pair in pairs:
        mags = np.stack([signatures[pair].magnitude for signatures in sets])
        phases = np.stack([signatures[pair].phase_rad for signatures in sets])

        mag_mean = mags.mean(axis=0)
        mag_std = np.maximum(mags.std(axis=0, ddof=1), policy.mag_floor(mag_mean))

        phase_mean = circular_mean(phases, axis=0)
        phase_std = np.maximum(wrapped_deviation_std(phases, phase_mean, axis=0), policy.phase_floor_rad)

        statistics[pair] = PairStatistics(
            mag_mean=mag_mean,
            mag_std=mag_std,
            phase_mean_rad=phase_mean,
            phase_std_rad=phase_std,
        )

    logger.info(f"✅ Baseline '{baseline_id}' built: {len(pairs)} pairs x {len(freqs)} bins")
    return Baseline(
        freqs_hz=freqs.copy(),
        statistics=statistics,
        n_datasets=len(sets),
        floor_policy=policy,
        baseline_id=baseline_id,
    )
