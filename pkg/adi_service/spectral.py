"""
Spectral Estimation for Active Damage Interrogation
Broadband excitation signals and actuator->sensor transfer function estimates
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import signal

from adi_service.config import config
from adi_service.errors import ConfigurationError, DataError, DomainError, EstimationError

logger = logging.getLogger(__name__)

# Bins whose excitation auto-spectrum falls below this fraction of the in-band
# peak are dropped from the analysis grid.
SXX_FLOOR_RATIO = 1e-12
COHERENCE_TOLERANCE = 1e-9


class ExcitationKind(Enum):
    LINEAR_CHIRP = "linear-chirp"
    BAND_LIMITED_RANDOM = "band-limited-random"


class WindowKind(Enum):
    HANN = "hann"
    RECTANGULAR = "rectangular"

    @property
    def scipy_name(self) -> str:
        return "hann" if self is WindowKind.HANN else "boxcar"


@dataclass(frozen=True)
class ExcitationConfig:
    """Drive signal description for one actuation run"""

    kind: ExcitationKind = ExcitationKind.LINEAR_CHIRP
    band_low_hz: float = 300.0
    band_high_hz: float = 1500.0
    amplitude: float = 1.0
    duration_s: float = 4.0
    sample_rate_hz: float = 4096.0
    # Tukey envelope on the chirp; 0 disables it
    taper_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'kind', ExcitationKind(self.kind))
        self.validate()

    def validate(self) -> None:
        nyquist = self.sample_rate_hz / 2
        if not self.sample_rate_hz > 0:
            raise ConfigurationError(f"sample_rate_hz must be > 0 (got {self.sample_rate_hz})")
        if not self.band_low_hz > 0:
            raise ConfigurationError(f"band_low_hz must be > 0 (got {self.band_low_hz})")
        if not self.band_low_hz < self.band_high_hz:
            raise ConfigurationError(
                f"band_low_hz must be < band_high_hz (got {self.band_low_hz} >= {self.band_high_hz})"
            )
        if not self.band_high_hz < nyquist:
            raise ConfigurationError(
                f"band_high_hz must be < sample_rate_hz/2 = {nyquist} (got {self.band_high_hz})"
            )
        if not self.duration_s > 0:
            raise ConfigurationError(f"duration_s must be > 0 (got {self.duration_s})")
        if not self.amplitude > 0:
            raise ConfigurationError(f"amplitude must be > 0 (got {self.amplitude})")
        if not 0 <= self.taper_fraction <= 1:
            raise ConfigurationError(f"taper_fraction must be in [0, 1] (got {self.taper_fraction})")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'band_low_hz': self.band_low_hz,
            'band_high_hz': self.band_high_hz,
            'amplitude': self.amplitude,
            'duration_s': self.duration_s,
            'sample_rate_hz': self.sample_rate_hz,
            'taper_fraction': self.taper_fraction,
        }


@dataclass(frozen=True)
class SpectralParams:
    """Welch estimator settings and analysis band"""

    segment_length: int = config.SEGMENT_LENGTH
    overlap_fraction: float = 0.5
    window: WindowKind = WindowKind.HANN
    band_low_hz: float = 300.0
    band_high_hz: float = 1500.0

    def __post_init__(self):
        object.__setattr__(self, 'window', WindowKind(self.window))
        seg = self.segment_length
        if seg < 64 or seg & (seg - 1):
            raise ConfigurationError(f"segment_length must be a power of two >= 64 (got {seg})")
        if not 0 <= self.overlap_fraction < 1:
            raise ConfigurationError(f"overlap_fraction must be in [0, 1) (got {self.overlap_fraction})")
        if not 0 <= self.band_low_hz < self.band_high_hz:
            raise ConfigurationError(
                f"analysis band must satisfy 0 <= low < high (got {self.band_low_hz}, {self.band_high_hz})"
            )

    @property
    def noverlap(self) -> int:
        return int(self.segment_length * self.overlap_fraction)

    @property
    def band(self) -> Tuple[float, float]:
        return (self.band_low_hz, self.band_high_hz)


@dataclass(frozen=True, eq=False)
class TimeSeriesRecord:
    """Sampled excitation and multi-channel responses for one actuation run"""

    actuator_id: int
    sample_rate_hz: float
    excitation: np.ndarray
    responses: Dict[int, np.ndarray]
    excitation_config: Optional[ExcitationConfig] = None
    seed: Optional[int] = None
    # Unrecognised metadata carried through persistence untouched
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample_rate_hz must be > 0 (got {self.sample_rate_hz})")
        excitation = np.asarray(self.excitation, dtype=float)
        responses = {int(k): np.asarray(v, dtype=float) for k, v in self.responses.items()}
        if not responses:
            raise DataError("record has no response channels")
        for channel, samples in responses.items():
            if samples.shape != excitation.shape:
                raise DataError(
                    f"channel {channel} has {samples.shape[0]} samples, excitation has {excitation.shape[0]}"
                )
        object.__setattr__(self, 'excitation', excitation)
        object.__setattr__(self, 'responses', responses)

    @property
    def n_samples(self) -> int:
        return int(self.excitation.shape[0])

    @property
    def channel_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.responses))


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Complex frequency response of one actuator->sensor pair"""

    actuator_id: int
    sensor_id: int
    freqs_hz: np.ndarray
    magnitude: np.ndarray
    phase_rad: np.ndarray
    coherence: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ('freqs_hz', 'magnitude', 'phase_rad', 'coherence'):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arrays[name])

        lengths = {name: values.shape for name, values in arrays.items()}
        if len(set(lengths.values())) != 1:
            raise DataError(f"transfer function arrays differ in length: {lengths}")
        if np.any(np.diff(arrays['freqs_hz']) <= 0):
            raise DataError("freqs_hz must be strictly ascending")
        if np.any(arrays['magnitude'] < 0):
            raise DataError("magnitude must be non-negative")
        coherence = arrays['coherence']
        if np.any(coherence < -COHERENCE_TOLERANCE) or np.any(coherence > 1 + COHERENCE_TOLERANCE):
            raise DataError("coherence must lie within [0, 1]")
        if not np.all(np.isfinite(arrays['phase_rad'])):
            raise DataError("phase_rad must be finite")
        # Stored phase always lies on (-pi, pi]
        object.__setattr__(self, 'phase_rad', np.asarray(wrap_phase(arrays['phase_rad'])))

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.actuator_id, self.sensor_id)

    @property
    def n_bins(self) -> int:
        return int(self.freqs_hz.shape[0])


def wrap_phase(angle: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Map angles onto (-pi, pi]; -pi itself maps to +pi"""
    values = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("wrap_phase requires finite angles")

    wrapped = values - 2 * np.pi * np.ceil((values - np.pi) / (2 * np.pi))
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2 * np.pi, wrapped)
    wrapped = np.where(wrapped > np.pi, wrapped - 2 * np.pi, wrapped)

    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def generate_excitation(excitation: ExcitationConfig, seed: int = 0) -> np.ndarray:
    """
    Generate the broadband drive signal

    Args:
        excitation: Signal description (validated on construction)
        seed: Seed for the random kind; the chirp is deterministic and ignores it

    Returns:
        round(duration_s * sample_rate_hz) samples
    """
    excitation.validate()
    n = excitation.n_samples
    fs = excitation.sample_rate_hz

    if excitation.kind is ExcitationKind.LINEAR_CHIRP:
        t = np.arange(n) / fs
        samples = signal.chirp(
            t,
            f0=excitation.band_low_hz,
            t1=excitation.duration_s,
            f1=excitation.band_high_hz,
            method='linear',
        )
        if excitation.taper_fraction > 0:
            samples = samples * signal.windows.tukey(n, alpha=excitation.taper_fraction)
        return excitation.amplitude * samples

    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spectrum[(freqs < excitation.band_low_hz) | (freqs > excitation.band_high_hz)] = 0.0
    samples = np.fft.irfft(spectrum, n=n)
    # Same RMS as a sinusoid of the configured amplitude
    return samples * (excitation.amplitude / math.sqrt(2)) / np.std(samples)


def band_energy_fraction(samples: np.ndarray, sample_rate_hz: float, band: Tuple[float, float]) -> float:
    """Fraction of a signal's spectral energy inside ``band``"""
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=float))) ** 2
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / sample_rate_hz)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    total = spectrum.sum()
    return float(spectrum[in_band].sum() / total) if total > 0 else 0.0


def estimate_transfer_function(
    record: TimeSeriesRecord,
    sensor_id: int,
    params: SpectralParams,
) -> TransferFunction:
    """
    H1 estimate S_xy / S_xx from Welch-averaged cross- and auto-spectra

    Args:
        record: Actuation run; the excitation channel is the reference
        sensor_id: Response channel to estimate
        params: Segmenting, window and analysis band

    Returns:
        TransferFunction restricted to the analysis band
    """
    if sensor_id not in record.responses:
        raise DataError(f"sensor {sensor_id} not present in record (channels {record.channel_ids})")
    if record.n_samples < 2 * params.segment_length:
        raise DataError(
            f"record has {record.n_samples} samples, need at least {2 * params.segment_length}"
        )
    nyquist = record.sample_rate_hz / 2
    if params.band_high_hz > nyquist:
        raise ConfigurationError(f"analysis band upper edge {params.band_high_hz} Hz exceeds Nyquist {nyquist} Hz")

    x = record.excitation
    y = record.responses[sensor_id]
    welch_kwargs = dict(
        fs=record.sample_rate_hz,
        window=params.window.scipy_name,
        nperseg=params.segment_length,
        noverlap=params.noverlap,
        detrend=False,
    )
    freqs, s_xx = signal.welch(x, **welch_kwargs)
    _, s_yy = signal.welch(y, **welch_kwargs)
    _, s_xy = signal.csd(x, y, **welch_kwargs)

    in_band = (freqs >= params.band_low_hz) & (freqs <= params.band_high_hz)
    if not in_band.any():
        raise ConfigurationError(f"analysis band {params.band} contains no frequency bins")

    peak = float(np.max(s_xx[in_band]))
    if not np.isfinite(peak) or peak <= 0:
        raise EstimationError(
            f"no excitation power in band {params.band} for actuator {record.actuator_id}"
        )
    keep = in_band & (s_xx >= SXX_FLOOR_RATIO * peak)

    s_xx_k = s_xx[keep]
    s_yy_k = s_yy[keep]
    s_xy_k = s_xy[keep]
    h = s_xy_k / s_xx_k

    denominator = s_xx_k * s_yy_k
    coherence = np.divide(
        np.abs(s_xy_k) ** 2,
        denominator,
        out=np.zeros_like(s_xx_k),
        where=denominator > 0,
    )

    logger.debug(
        f"H1 estimate {record.actuator_id}->{sensor_id}: {int(keep.sum())} bins, "
        f"median coherence {np.median(coherence):.3f}"
    )

    return TransferFunction(
        actuator_id=record.actuator_id,
        sensor_id=sensor_id,
        freqs_hz=freqs[keep],
        magnitude=np.abs(h),
        phase_rad=wrap_phase(np.angle(h)),
        coherence=np.clip(coherence, 0.0, 1.0),
    )
