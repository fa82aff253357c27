"""
ADI Harness
Scenario configuration and execution, recording and baseline persistence,
decision-table reports, deviation exports and ROC sweeps
"""

import contextlib
import io
import json
import logging
import os
import re
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from adi_service.baseline import (
    Baseline,
    Pair,
    PairStatistics,
    SignatureSet,
    StdFloorPolicy,
    accumulate_baseline,
)
from adi_service.config import config
from adi_service.errors import (
    ADIError,
    CaseFailedError,
    ConfigurationError,
    DataError,
    InsufficientDataError,
    ParseError,
    UnsupportedVersionError,
)
from adi_service.interrogation import (
    DamageIndexVector,
    ThresholdCalibration,
    calibrate_threshold,
    diagnose,
    interrogate,
    normalized_deviation,
    windowed_average,
)
from adi_service.spectral import (
    ExcitationConfig,
    ExcitationKind,
    SpectralParams,
    TimeSeriesRecord,
    WindowKind,
)
from adi_service.structsim import (
    DamageSpec,
    StructureModel,
    StructureSimulator,
    apply_damages,
    signatures_from_records,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
RECORDING_FORMAT = "adi-recording"
BASELINE_FORMAT = "adi-baseline"
REPORT_FORMAT = "adi-report"

_RECORDING_KEYS = {
    'format', 'format_version', 'sample_rate_hz', 'actuator_id',
    'transducer_ids', 'n_samples', 'excitation', 'seed',
}
_CHANNEL_COLUMN = re.compile(r'ch(\d+)')
_DI_COLUMN = re.compile(r'di\s*#?\s*(\d+)', re.IGNORECASE)


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------

def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write a whole UTF-8 file through a temp file and rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not text.endswith('\n'):
        text += '\n'

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp_name)
        raise
    return path


def _read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=str(path), line=e.lineno) from e
    if not isinstance(document, dict):
        raise ParseError("expected a JSON object", path=str(path), line=1)
    return document


def _require(document: Mapping[str, Any], key: str, path: Path) -> Any:
    if key not in document:
        raise ParseError(f"missing required field '{key}'", path=str(path))
    return document[key]


def _check_format(document: Mapping[str, Any], expected: str, path: Path) -> None:
    found = document.get('format')
    if found != expected:
        raise ParseError(f"expected format '{expected}' (got {found!r})", path=str(path))
    version = document.get('format_version')
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: {expected} format_version {version!r} is not supported (expected {FORMAT_VERSION})"
        )


def _to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format='%.17g', lineterminator='\n')


# ---------------------------------------------------------------------------
# Recordings
# ---------------------------------------------------------------------------

def _recording_paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    path = Path(path)
    name = path.name
    for suffix in ('.meta.json', '.csv'):
        if name.endswith(suffix):
            name = name[:-len(suffix)]
            break
    stem = path.with_name(name)
    return stem.with_name(name + '.meta.json'), stem.with_name(name + '.csv')


def save_recording(record: TimeSeriesRecord, path: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Save a record as ``<path>.meta.json`` plus ``<path>.csv``

    The sample table has a ``t,excitation,ch<id>,...`` header and 17 significant
    digits per value, so loading returns bit-identical samples.
    """
    meta_path, csv_path = _recording_paths(path)

    meta: Dict[str, Any] = {k: v for k, v in record.metadata.items() if k not in _RECORDING_KEYS}
    meta.update({
        'format': RECORDING_FORMAT,
        'format_version': FORMAT_VERSION,
        'sample_rate_hz': record.sample_rate_hz,
        'actuator_id': record.actuator_id,
        'transducer_ids': list(record.channel_ids),
        'n_samples': record.n_samples,
        'excitation': record.excitation_config.to_dict() if record.excitation_config else None,
        'seed': record.seed,
    })

    columns: Dict[str, np.ndarray] = {
        't': np.arange(record.n_samples) / record.sample_rate_hz,
        'excitation': record.excitation,
    }
    for channel in record.channel_ids:
        columns[f'ch{channel}'] = record.responses[channel]

    atomic_write_text(csv_path, _to_csv(pd.DataFrame(columns)))
    atomic_write_text(meta_path, json.dumps(meta, indent=2))
    return meta_path, csv_path


def _parse_sample_table(text: str, csv_path: Path, expected_channels: Optional[Sequence[int]]) -> Tuple[pd.DataFrame, List[int]]:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty sample table", path=str(csv_path), line=1)

    header = lines[0].split(',')
    if header[:2] != ['t', 'excitation']:
        raise ParseError(f"header must start with 't,excitation' (got '{lines[0]}')", path=str(csv_path), line=1)

    channels = []
    for name in header[2:]:
        match = _CHANNEL_COLUMN.fullmatch(name)
        if not match:
            raise ParseError(f"malformed channel column '{name}'", path=str(csv_path), line=1)
        channels.append(int(match.group(1)))
    if not channels:
        raise ParseError("sample table has no response channels", path=str(csv_path), line=1)
    if len(set(channels)) != len(channels):
        raise ParseError(f"duplicate channel columns {channels}", path=str(csv_path), line=1)
    if expected_channels is not None:
        unknown = sorted(set(channels) - set(expected_channels))
        absent = sorted(set(expected_channels) - set(channels))
        if unknown or absent:
            raise ParseError(
                f"channel ids {channels} do not match metadata transducer_ids {list(expected_channels)}",
                path=str(csv_path),
                line=1,
            )

    for number, line in enumerate(lines[1:], start=2):
        n_fields = line.count(',') + 1
        if n_fields != len(header):
            raise ParseError(f"expected {len(header)} fields, found {n_fields}", path=str(csv_path), line=number)

    frame = pd.read_csv(io.StringIO(text), float_precision='round_trip')
    for column in frame.columns:
        values = pd.to_numeric(frame[column], errors='coerce')
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            raise ParseError(f"non-numeric value in column '{column}'", path=str(csv_path), line=int(bad[0]) + 2)
    return frame, channels


def load_recording(path: Union[str, Path]) -> TimeSeriesRecord:
    """Load a record saved by ``save_recording``; unknown metadata keys are kept"""
    meta_path, csv_path = _recording_paths(path)
    meta = _read_json(meta_path)
    _check_format(meta, RECORDING_FORMAT, meta_path)

    sample_rate_hz = float(_require(meta, 'sample_rate_hz', meta_path))
    actuator_id = int(_require(meta, 'actuator_id', meta_path))
    transducer_ids = meta.get('transducer_ids')

    excitation_config = None
    if meta.get('excitation') is not None:
        try:
            excitation_config = ExcitationConfig(**meta['excitation'])
        except (TypeError, ValueError) as e:
            raise ParseError(f"invalid excitation description: {e}", path=str(meta_path)) from e

    try:
        text = csv_path.read_text(encoding='utf-8')
    except OSError as e:
        raise DataError(f"cannot read {csv_path}: {e}") from e
    frame, channels = _parse_sample_table(text, csv_path, transducer_ids)

    n_samples = meta.get('n_samples')
    if n_samples is not None and int(n_samples) != len(frame):
        raise ParseError(
            f"metadata declares {n_samples} samples, table has {len(frame)}",
            path=str(csv_path),
            line=len(frame) + 1,
        )

    return TimeSeriesRecord(
        actuator_id=actuator_id,
        sample_rate_hz=sample_rate_hz,
        excitation=frame['excitation'].to_numpy(dtype=float),
        responses={channel: frame[f'ch{channel}'].to_numpy(dtype=float) for channel in channels},
        excitation_config=excitation_config,
        seed=meta.get('seed'),
        metadata={k: v for k, v in meta.items() if k not in _RECORDING_KEYS},
    )


def save_cycle(records: Sequence[TimeSeriesRecord], directory: Union[str, Path]) -> Path:
    """One round-robin cycle as ``actuator_<id>`` files in ``directory``"""
    directory = Path(directory)
    for record in records:
        save_recording(record, directory / f'actuator_{record.actuator_id}')
    return directory


def load_cycle(directory: Union[str, Path]) -> List[TimeSeriesRecord]:
    directory = Path(directory)
    meta_files = sorted(directory.glob('actuator_*.meta.json'))
    if not meta_files:
        raise DataError(f"no recordings found in {directory}")
    records = [load_recording(path) for path in meta_files]
    return sorted(records, key=lambda r: r.actuator_id)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def save_baseline(baseline: Baseline, path: Union[str, Path]) -> Path:
    document = {
        'format': BASELINE_FORMAT,
        'format_version': FORMAT_VERSION,
        'baseline_id': baseline.baseline_id,
        'n_datasets': baseline.n_datasets,
        'floor_policy': baseline.floor_policy.to_dict(),
        'freqs_hz': baseline.freqs_hz.tolist(),
        'pairs': [
            {
                'actuator_id': actuator,
                'sensor_id': sensor,
                'mag_mean': stats.mag_mean.tolist(),
                'mag_std': stats.mag_std.tolist(),
                'phase_mean_rad': stats.phase_mean_rad.tolist(),
                'phase_std_rad': stats.phase_std_rad.tolist(),
            }
            for (actuator, sensor), stats in sorted(baseline.statistics.items())
        ],
    }
    logger.info(f"💾 Saving baseline '{baseline.baseline_id}' to {path}")
    return atomic_write_text(path, json.dumps(document, indent=2))


def load_baseline(path: Union[str, Path]) -> Baseline:
    path = Path(path)
    document = _read_json(path)
    _check_format(document, BASELINE_FORMAT, path)

    try:
        statistics: Dict[Pair, PairStatistics] = {}
        for entry in _require(document, 'pairs', path):
            pair = (int(entry['actuator_id']), int(entry['sensor_id']))
            statistics[pair] = PairStatistics(
                mag_mean=np.asarray(entry['mag_mean'], dtype=float),
                mag_std=np.asarray(entry['mag_std'], dtype=float),
                phase_mean_rad=np.asarray(entry['phase_mean_rad'], dtype=float),
                phase_std_rad=np.asarray(entry['phase_std_rad'], dtype=float),
            )
        floor_policy = StdFloorPolicy.from_dict(_require(document, 'floor_policy', path))
        freqs = np.asarray(_require(document, 'freqs_hz', path), dtype=float)
        n_datasets = int(_require(document, 'n_datasets', path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ADIError):
            raise
        raise ParseError(f"malformed baseline entry: {e}", path=str(path)) from e

    for (actuator, sensor), stats in statistics.items():
        phase = stats.phase_mean_rad
        if not np.all((phase > -np.pi) & (phase <= np.pi)):
            raise ParseError(
                f"phase_mean_rad for pair ({actuator}, {sensor}) lies outside (-pi, pi]",
                path=str(path),
            )

    return Baseline(
        freqs_hz=freqs,
        statistics=statistics,
        n_datasets=n_datasets,
        floor_policy=floor_policy,
        baseline_id=str(document.get('baseline_id', 'baseline')),
    )


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

class _Settings(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class ChainSettings(_Settings):
    n_nodes: int = Field(64, ge=8)
    mass_kg: float = Field(0.05, gt=0)
    stiffness_n_per_m: float = Field(2e6, gt=0)
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(1.5e-4, ge=0)
    pitch_m: float = Field(0.02, gt=0)


class TransducerSettings(_Settings):
    count: int = Field(4, ge=2)
    spacing_nodes: Optional[int] = Field(8, ge=1)
    # Explicit transducer id -> node map; overrides count and spacing
    nodes: Optional[Dict[int, int]] = None


class ExcitationSettings(_Settings):
    kind: Literal['linear-chirp', 'band-limited-random'] = 'linear-chirp'
    band_low_hz: float = 300.0
    band_high_hz: float = 1500.0
    amplitude: float = 1.0
    duration_s: float = 8.0
    sample_rate_hz: float = 4096.0
    taper_fraction: float = 0.1

    def to_config(self) -> ExcitationConfig:
        return ExcitationConfig(
            kind=ExcitationKind(self.kind),
            band_low_hz=self.band_low_hz,
            band_high_hz=self.band_high_hz,
            amplitude=self.amplitude,
            duration_s=self.duration_s,
            sample_rate_hz=self.sample_rate_hz,
            taper_fraction=self.taper_fraction,
        )


class SpectralSettings(_Settings):
    segment_length: int = Field(default_factory=lambda: config.SEGMENT_LENGTH)
    overlap_fraction: float = 0.5
    window: Literal['hann', 'rectangular'] = 'hann'
    # Estimation band; the excitation band when unset
    band: Optional[Tuple[float, float]] = None


class InterrogationSettings(_Settings):
    threshold: float = Field(default_factory=lambda: config.DETECTION_THRESHOLD, gt=0)
    window_bins: int = Field(default_factory=lambda: config.WINDOW_BINS, ge=1)
    # CAD integration band; the whole estimation grid when unset
    band: Optional[Tuple[float, float]] = None
    null_level: float = Field(default_factory=lambda: config.NULL_LEVEL)
    exponent: float = Field(2.0, gt=0)


class DamageSettings(_Settings):
    """A stiffness loss placed either at a node or relative to a transducer's node"""

    severity: float = Field(ge=0, lt=1)
    site_node: Optional[int] = Field(None, ge=0)
    at_transducer: Optional[int] = None
    # Signed node offset from the at_transducer node
    offset_nodes: int = 0

    @model_validator(mode='after')
    def _one_site(self) -> 'DamageSettings':
        if (self.site_node is None) == (self.at_transducer is None):
            raise ValueError("give exactly one of site_node or at_transducer")
        if self.offset_nodes and self.at_transducer is None:
            raise ValueError("offset_nodes applies only with at_transducer")
        return self


class BaselineSettings(_Settings):
    id: str
    damage: List[DamageSettings] = Field(default_factory=list)
    cycles: int = Field(default_factory=lambda: config.BASELINE_CYCLES, ge=3)


class CaseSettings(_Settings):
    label: str
    damage: List[DamageSettings] = Field(default_factory=list)
    baseline: str = "healthy"
    seed: Optional[int] = None


class ScenarioConfig(_Settings):
    name: str = "adi-scenario"
    seed: int = Field(default_factory=lambda: config.RANDOM_STATE)
    noise_std: float = Field(0.05, ge=0)
    chain: ChainSettings = Field(default_factory=ChainSettings)
    transducers: TransducerSettings = Field(default_factory=TransducerSettings)
    excitation: ExcitationSettings = Field(default_factory=ExcitationSettings)
    spectral: SpectralSettings = Field(default_factory=SpectralSettings)
    interrogation: InterrogationSettings = Field(default_factory=InterrogationSettings)
    baselines: List[BaselineSettings] = Field(default_factory=lambda: [BaselineSettings(id="healthy")])
    cases: List[CaseSettings] = Field(default_factory=list)

    @model_validator(mode='after')
    def _references_resolve(self) -> 'ScenarioConfig':
        baseline_ids = [b.id for b in self.baselines]
        if len(set(baseline_ids)) != len(baseline_ids):
            raise ValueError(f"baseline ids must be unique (got {baseline_ids})")
        labels = [c.label for c in self.cases]
        if len(set(labels)) != len(labels):
            raise ValueError(f"case labels must be unique (got {labels})")
        for case in self.cases:
            if case.baseline not in baseline_ids:
                raise ValueError(f"case '{case.label}' references unknown baseline '{case.baseline}'")
        return self

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'ScenarioConfig':
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"invalid scenario: {e}") from e

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ScenarioConfig':
        try:
            return cls.from_dict(_read_json(path))
        except DataError as e:
            raise ConfigurationError(str(e)) from e

    def build_model(self) -> StructureModel:
        chain = self.chain
        return StructureModel.chain(
            n_nodes=chain.n_nodes,
            mass_kg=chain.mass_kg,
            stiffness_n_per_m=chain.stiffness_n_per_m,
            alpha=chain.alpha,
            beta=chain.beta,
            pitch_m=chain.pitch_m,
            transducer_count=self.transducers.count,
            spacing_nodes=self.transducers.spacing_nodes,
            transducer_nodes=self.transducers.nodes,
        )

    def excitation_config(self) -> ExcitationConfig:
        try:
            return self.excitation.to_config()
        except ConfigurationError as e:
            raise ConfigurationError(f"scenario excitation: {e}") from e

    def spectral_params(self) -> SpectralParams:
        band = self.spectral.band or (self.excitation.band_low_hz, self.excitation.band_high_hz)
        return SpectralParams(
            segment_length=self.spectral.segment_length,
            overlap_fraction=self.spectral.overlap_fraction,
            window=WindowKind(self.spectral.window),
            band_low_hz=band[0],
            band_high_hz=band[1],
        )

    def baseline_settings(self, baseline_id: str) -> BaselineSettings:
        for settings in self.baselines:
            if settings.id == baseline_id:
                return settings
        raise ConfigurationError(f"unknown baseline '{baseline_id}'")


def load_scenario(path: Optional[Union[str, Path]] = None) -> ScenarioConfig:
    """Scenario from a JSON file, or the default scenario"""
    if path is None:
        return default_scenario()
    logger.info(f"📋 Loading scenario from {path}")
    return ScenarioConfig.from_file(path)


def default_scenario(seed: Optional[int] = None) -> ScenarioConfig:
    """
    Two healthy and nine damaged cases. Each site sits one node inside the
    first or last transducer of the patch, so the damaged springs lie between
    that transducer and the rest of the array; cases 9-11 reference a baseline
    recorded with the large first-site damage already present.
    """
    small, medium, large = 0.05, 0.15, 0.30

    def site1(severity: float) -> DamageSettings:
        return DamageSettings(at_transducer=1, offset_nodes=1, severity=severity)

    def site2(severity: float) -> DamageSettings:
        return DamageSettings(at_transducer=4, offset_nodes=-1, severity=severity)

    cases = [
        CaseSettings(label="1"),
        CaseSettings(label="2"),
        CaseSettings(label="3", damage=[site1(small)]),
        CaseSettings(label="4", damage=[site1(medium)]),
        CaseSettings(label="5", damage=[site1(large)]),
        CaseSettings(label="6", damage=[site1(large), site2(small)]),
        CaseSettings(label="7", damage=[site1(large), site2(medium)]),
        CaseSettings(label="8", damage=[site1(large), site2(large)]),
        CaseSettings(label="9", damage=[site1(large), site2(small)], baseline="delam-site1"),
        CaseSettings(label="10", damage=[site1(large), site2(medium)], baseline="delam-site1"),
        CaseSettings(label="11", damage=[site1(large), site2(large)], baseline="delam-site1"),
    ]
    return ScenarioConfig(
        name="default",
        seed=config.RANDOM_STATE if seed is None else seed,
        baselines=[
            BaselineSettings(id="healthy"),
            BaselineSettings(id="delam-site1", damage=[site1(large)]),
        ],
        cases=cases,
    )


def derive_seed(seed: int, *keys: str) -> int:
    """Stable per-stream seed from the scenario seed and text keys"""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(key.encode('utf-8')) for key in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def resolve_damage(model: StructureModel, settings: Sequence[DamageSettings]) -> List[DamageSpec]:
    specs = []
    for item in settings:
        if item.at_transducer is not None:
            if item.at_transducer not in model.transducer_nodes:
                raise ConfigurationError(f"damage placed at unknown transducer {item.at_transducer}")
            node = model.transducer_nodes[item.at_transducer] + item.offset_nodes
        else:
            node = int(item.site_node)
        if not 0 <= node < model.n_nodes:
            raise ConfigurationError(f"damage site {node} outside 0..{model.n_nodes - 1}")
        specs.append(DamageSpec(site_node=node, severity=item.severity))
    return specs


def describe_damage(specs: Sequence[DamageSpec]) -> str:
    if not specs:
        return "none"
    return "; ".join(f"node {s.site_node} x{1 - s.severity:.2f}" for s in specs)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ReportRow:
    label: str
    baseline_id: str
    di: Dict[int, float]
    detected: bool
    location_argmax: Optional[int] = None
    location_estimate_m: Optional[float] = None
    damage: str = ""
    # Ground truth relative to the referenced baseline, when known
    damage_present: Optional[bool] = None

    @property
    def max_di(self) -> float:
        return max(self.di.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'label': self.label,
            'baseline_id': self.baseline_id,
            'di': {str(t): v for t, v in sorted(self.di.items())},
            'detected': self.detected,
            'location_argmax': self.location_argmax,
            'location_estimate_m': self.location_estimate_m,
            'damage': self.damage,
            'damage_present': self.damage_present,
        }

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'ReportRow':
        return cls(
            label=str(values['label']),
            baseline_id=str(values['baseline_id']),
            di={int(t): float(v) for t, v in values['di'].items()},
            detected=bool(values['detected']),
            location_argmax=values.get('location_argmax'),
            location_estimate_m=values.get('location_estimate_m'),
            damage=values.get('damage', ''),
            damage_present=values.get('damage_present'),
        )


@dataclass
class DiagnosisReport:
    """Decision table: one row per case, DI per transducer"""

    threshold: float
    rows: List[ReportRow] = field(default_factory=list)
    transducer_ids: List[int] = field(default_factory=list)
    scenario: str = ""

    def to_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record: Dict[str, Any] = {'case': row.label, 'baseline': row.baseline_id}
            for transducer in self.transducer_ids:
                record[f'DI #{transducer}'] = row.di.get(transducer, np.nan)
            record['detected'] = row.detected
            record['location'] = row.location_argmax
            record['location_estimate_m'] = row.location_estimate_m
            record['damage_present'] = row.damage_present
            records.append(record)
        columns = (
            ['case', 'baseline']
            + [f'DI #{t}' for t in self.transducer_ids]
            + ['detected', 'location', 'location_estimate_m', 'damage_present']
        )
        return pd.DataFrame(records, columns=columns)

    def render_text(self) -> str:
        """Aligned text table with two-decimal damage indices"""
        header = f"Scenario: {self.scenario or '-'}    Threshold: {self.threshold:.2f}"
        if not self.rows:
            return f"{header}\n(no cases)\n"

        table = pd.DataFrame({
            'Case #': [row.label for row in self.rows],
            'Baseline': [row.baseline_id for row in self.rows],
            **{
                f'DI #{t}': [f"{row.di[t]:.2f}" if t in row.di else "-" for row in self.rows]
                for t in self.transducer_ids
            },
            'Damage Detected?': ["Yes" if row.detected else "No" for row in self.rows],
            'Location Identified': [
                str(row.location_argmax) if row.location_argmax is not None else "-" for row in self.rows
            ],
            'Estimate (m)': [
                f"{row.location_estimate_m:.3f}" if row.location_estimate_m is not None else "-"
                for row in self.rows
            ],
        })
        return f"{header}\n{table.to_string(index=False)}\n"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': REPORT_FORMAT,
            'format_version': FORMAT_VERSION,
            'scenario': self.scenario,
            'threshold': self.threshold,
            'transducer_ids': list(self.transducer_ids),
            'rows': [row.to_dict() for row in self.rows],
        }

    def detection_samples(self) -> Tuple[List[float], List[float]]:
        """Max DI of rows without and with damage relative to their baseline"""
        healthy = [row.max_di for row in self.rows if row.damage_present is False]
        damaged = [row.max_di for row in self.rows if row.damage_present is True]
        return healthy, damaged


def save_report(report: DiagnosisReport, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, json.dumps(report.to_dict(), indent=2))


def load_report(path: Union[str, Path]) -> DiagnosisReport:
    path = Path(path)
    document = _read_json(path)
    _check_format(document, REPORT_FORMAT, path)
    try:
        return DiagnosisReport(
            threshold=float(document['threshold']),
            rows=[ReportRow.from_dict(row) for row in document['rows']],
            transducer_ids=[int(t) for t in document['transducer_ids']],
            scenario=str(document.get('scenario', '')),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed report: {e}", path=str(path)) from e


def _row_from_di(
    label: str,
    div: DamageIndexVector,
    threshold: float,
    positions: Optional[Mapping[int, float]],
    null_level: float,
    exponent: float,
    damage: str = "",
    damage_present: Optional[bool] = None,
) -> ReportRow:
    diagnosis = diagnose(div, threshold, positions=positions, null_level=null_level, exponent=exponent)
    return ReportRow(
        label=label,
        baseline_id=div.baseline_id,
        di=dict(div.di),
        detected=diagnosis.detected,
        location_argmax=diagnosis.location_argmax,
        location_estimate_m=diagnosis.location_estimate,
        damage=damage,
        damage_present=damage_present,
    )


def load_di_table(path: Union[str, Path]) -> pd.DataFrame:
    """Prepared DI table: a case column and ``DI #<id>`` columns"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"cannot read DI table: {e}", path=str(path)) from e
    if not any(_DI_COLUMN.fullmatch(str(c).strip()) for c in frame.columns):
        raise ParseError("DI table has no 'DI #<id>' columns", path=str(path), line=1)
    return frame


def report_from_di_table(
    frame: pd.DataFrame,
    threshold: float = config.DETECTION_THRESHOLD,
    positions: Optional[Mapping[int, float]] = None,
    null_level: float = config.NULL_LEVEL,
    exponent: float = 2.0,
) -> DiagnosisReport:
    """Run prepared damage indices through detection and localization"""
    di_columns: Dict[int, Any] = {}
    case_column = None
    baseline_column = None
    truth_column = None
    for column in frame.columns:
        name = str(column).strip()
        match = _DI_COLUMN.fullmatch(name)
        if match:
            di_columns[int(match.group(1))] = column
        elif name.lower() in ('case', 'case #', 'label'):
            case_column = column
        elif name.lower() == 'baseline':
            baseline_column = column
        elif name.lower() in ('damaged', 'damage_present'):
            truth_column = column
    if not di_columns:
        raise DataError("DI table has no 'DI #<id>' columns")

    transducers = sorted(di_columns)
    report = DiagnosisReport(threshold=float(threshold), transducer_ids=transducers, scenario="di-table")
    for position, (_, row) in enumerate(frame.iterrows(), start=1):
        label = str(row[case_column]) if case_column is not None else str(position)
        values = {t: float(row[di_columns[t]]) for t in transducers}
        if not all(np.isfinite(v) for v in values.values()):
            raise DataError(f"case '{label}' has missing damage index values")
        div = DamageIndexVector(
            di=values,
            per_pair_cads={},
            baseline_id=str(row[baseline_column]) if baseline_column is not None else "baseline",
        )
        truth = bool(row[truth_column]) if truth_column is not None else None
        report.rows.append(_row_from_di(label, div, threshold, positions, null_level, exponent, damage_present=truth))
    return report


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------

@dataclass
class _CaseOutcome:
    row: ReportRow
    div: DamageIndexVector


def _baseline_seeds(scenario: ScenarioConfig, settings: BaselineSettings) -> List[int]:
    return [derive_seed(scenario.seed, 'baseline', settings.id, str(i)) for i in range(settings.cycles)]


def _case_seed(scenario: ScenarioConfig, case: CaseSettings) -> int:
    return case.seed if case.seed is not None else derive_seed(scenario.seed, 'case', case.label)


def build_baseline(
    scenario: ScenarioConfig,
    settings: BaselineSettings,
    model: Optional[StructureModel] = None,
) -> Baseline:
    """Simulate the reference cycles of one baseline and accumulate them"""
    model = model or scenario.build_model()
    reference = apply_damages(model, resolve_damage(model, settings.damage))
    simulator = StructureSimulator(reference, scenario.excitation_config())
    params = scenario.spectral_params()

    logger.info(f"🎲 Simulating {settings.cycles} reference cycles for baseline '{settings.id}'")
    sets = [
        signatures_from_records(
            simulator.cycle_records(scenario.noise_std, seed),
            params,
            label=f"{settings.id}/cycle_{index:02d}",
        )
        for index, seed in enumerate(_baseline_seeds(scenario, settings))
    ]
    return accumulate_baseline(sets, baseline_id=settings.id)


def _run_case(
    scenario: ScenarioConfig,
    case: CaseSettings,
    model: StructureModel,
    baselines: Mapping[str, Baseline],
) -> _CaseOutcome:
    try:
        specs = resolve_damage(model, case.damage)
        reference_specs = resolve_damage(model, scenario.baseline_settings(case.baseline).damage)
        damaged = apply_damages(model, specs)
        simulator = StructureSimulator(damaged, scenario.excitation_config())
        records = simulator.cycle_records(scenario.noise_std, _case_seed(scenario, case))
        signatures = signatures_from_records(records, scenario.spectral_params(), label=case.label)

        settings = scenario.interrogation
        div = interrogate(signatures, baselines[case.baseline], settings.window_bins, settings.band)
        row = _row_from_di(
            case.label,
            div,
            settings.threshold,
            model.transducer_positions(),
            settings.null_level,
            settings.exponent,
            damage=describe_damage(specs),
            damage_present=set(specs) != set(reference_specs),
        )
    except ADIError as e:
        logger.error(f"❌ Case '{case.label}' failed: {e}")
        raise CaseFailedError(case.label, e) from e
    return _CaseOutcome(row=row, div=div)


def run_scenario(scenario: ScenarioConfig, n_jobs: Optional[int] = None) -> DiagnosisReport:
    """
    Build every baseline, run every case through the full pipeline and
    assemble the decision table in case order

    Args:
        scenario: Validated scenario
        n_jobs: Thread count for baselines and cases (ADI_MAX_WORKERS by default)

    Returns:
        DiagnosisReport; identical scenarios give identical reports
    """
    n_jobs = n_jobs or config.MAX_WORKERS
    model = scenario.build_model()
    logger.info(
        f"🚀 Running scenario '{scenario.name}': {len(scenario.baselines)} baselines, "
        f"{len(scenario.cases)} cases, {n_jobs} workers"
    )

    referenced = [b for b in scenario.baselines if any(c.baseline == b.id for c in scenario.cases)]

    def build(settings: BaselineSettings) -> Baseline:
        try:
            return build_baseline(scenario, settings, model)
        except ADIError as e:
            raise CaseFailedError(f"baseline {settings.id}", e) from e

    built = Parallel(n_jobs=n_jobs, backend='threading')(delayed(build)(b) for b in referenced)
    baselines = {baseline.baseline_id: baseline for baseline in built}

    outcomes = Parallel(n_jobs=n_jobs, backend='threading')(
        delayed(_run_case)(scenario, case, model, baselines) for case in scenario.cases
    )

    report = DiagnosisReport(
        threshold=scenario.interrogation.threshold,
        rows=[outcome.row for outcome in outcomes],
        transducer_ids=model.transducer_ids,
        scenario=scenario.name,
    )
    detected = sum(row.detected for row in report.rows)
    logger.info(f"✅ Scenario '{scenario.name}' complete: {detected}/{len(report.rows)} cases detected")
    return report


def simulate_recordings(scenario: ScenarioConfig, root: Union[str, Path], n_jobs: Optional[int] = None) -> Path:
    """
    Write every baseline cycle and case of a scenario to disk:
    ``<root>/baselines/<id>/cycle_NN/`` and ``<root>/cases/<label>/``
    """
    root = Path(root)
    n_jobs = n_jobs or config.MAX_WORKERS
    model = scenario.build_model()
    excitation = scenario.excitation_config()

    jobs = []
    for settings in scenario.baselines:
        simulator = StructureSimulator(apply_damages(model, resolve_damage(model, settings.damage)), excitation)
        for index, seed in enumerate(_baseline_seeds(scenario, settings)):
            jobs.append((simulator, seed, root / 'baselines' / settings.id / f'cycle_{index:02d}'))
    for case in scenario.cases:
        simulator = StructureSimulator(apply_damages(model, resolve_damage(model, case.damage)), excitation)
        jobs.append((simulator, _case_seed(scenario, case), root / 'cases' / case.label))

    def write(simulator: StructureSimulator, seed: int, directory: Path) -> Path:
        return save_cycle(simulator.cycle_records(scenario.noise_std, seed), directory)

    logger.info(f"🎲 Writing {len(jobs)} simulated cycles under {root}")
    Parallel(n_jobs=n_jobs, backend='threading')(delayed(write)(*job) for job in jobs)
    atomic_write_text(root / 'scenario.json', scenario.model_dump_json(indent=2))
    return root


def baseline_from_recordings(
    directory: Union[str, Path],
    params: SpectralParams,
    baseline_id: Optional[str] = None,
) -> Baseline:
    """Accumulate a baseline from ``cycle_*`` subdirectories"""
    directory = Path(directory)
    cycle_dirs = sorted(p for p in directory.glob('cycle_*') if p.is_dir())
    if len(cycle_dirs) < 3:
        raise InsufficientDataError(f"{directory} holds {len(cycle_dirs)} cycles, need at least 3")
    sets = [signatures_from_records(load_cycle(d), params, label=d.name) for d in cycle_dirs]
    return accumulate_baseline(sets, baseline_id=baseline_id or directory.name)


def interrogate_recordings(
    baseline: Baseline,
    case_dirs: Sequence[Union[str, Path]],
    params: SpectralParams,
    threshold: float = config.DETECTION_THRESHOLD,
    window_bins: int = config.WINDOW_BINS,
    band: Optional[Tuple[float, float]] = None,
    positions: Optional[Mapping[int, float]] = None,
    null_level: float = config.NULL_LEVEL,
) -> DiagnosisReport:
    report = DiagnosisReport(threshold=float(threshold), transducer_ids=baseline.transducer_ids)
    for case_dir in case_dirs:
        case_dir = Path(case_dir)
        signatures = signatures_from_records(load_cycle(case_dir), params, label=case_dir.name)
        div = interrogate(signatures, baseline, window_bins, band)
        report.rows.append(_row_from_di(case_dir.name, div, threshold, positions, null_level, 2.0))
    return report


# ---------------------------------------------------------------------------
# Deviation export and ROC
# ---------------------------------------------------------------------------

def export_deviation(
    baseline: Baseline,
    signatures: SignatureSet,
    pair: Pair,
    path: Optional[Union[str, Path]] = None,
    window_bins: int = config.WINDOW_BINS,
) -> pd.DataFrame:
    """Per-bin z-scores and smoothed |z| for one pair, optionally written as CSV"""
    deviation = normalized_deviation(signatures[tuple(pair)], baseline)
    smoothed = windowed_average(deviation, window_bins)
    frame = pd.DataFrame({
        'freq_hz': deviation.freqs_hz,
        'z_mag': deviation.z_mag,
        'z_phase': deviation.z_phase,
        'smoothed_mag': smoothed.mag,
        'smoothed_phase': smoothed.phase,
    })
    if path is not None:
        atomic_write_text(path, _to_csv(frame))
        logger.info(f"📈 Deviation export for pair {tuple(pair)} written to {path}")
    return frame


def plot_deviation(
    frame: pd.DataFrame,
    path: Union[str, Path],
    threshold: Optional[float] = None,
    title: Optional[str] = None,
) -> Path:
    """Magnitude and phase deviation against frequency, saved as an image"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(9, 6))
    for ax, channel, label in ((axes[0], 'mag', 'Magnitude'), (axes[1], 'phase', 'Phase')):
        ax.plot(frame['freq_hz'], np.abs(frame[f'z_{channel}']), color='0.7', lw=0.8, label='|z|')
        ax.plot(frame['freq_hz'], frame[f'smoothed_{channel}'], color='C0', lw=1.5, label='smoothed')
        if threshold is not None:
            ax.axhline(threshold, color='C3', ls='--', lw=1.0, label=f'threshold {threshold:g}')
        ax.set_ylabel(f'{label} deviation (std)')
        ax.grid(True, alpha=0.3)
        ax.legend(loc='upper right')
    axes[1].set_xlabel('Frequency (Hz)')
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def roc_sweep(
    healthy_dis: Sequence[float],
    damaged_dis: Sequence[float],
    false_alarm_cost: float = 1.0,
    miss_cost: float = 1.0,
    path: Optional[Union[str, Path]] = None,
) -> ThresholdCalibration:
    """ROC table over the pooled DI samples; written as CSV when ``path`` is given"""
    calibration = calibrate_threshold(healthy_dis, damaged_dis, false_alarm_cost, miss_cost)
    if path is not None:
        atomic_write_text(path, _to_csv(calibration.roc))
        logger.info(f"📈 ROC table ({len(calibration.roc)} rows) written to {path}")
    return calibration
