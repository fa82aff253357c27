"""
Structure Simulator for Active Damage Interrogation
Mass-spring-damper chain standing in for an instrumented cantilever, with
local stiffness loss as the delamination surrogate
"""

import dataclasses
import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from adi_service.baseline import SignatureSet
from adi_service.errors import ConfigurationError, SingularSystemError
from adi_service.spectral import (
    ExcitationConfig,
    SpectralParams,
    TimeSeriesRecord,
    TransferFunction,
    estimate_transfer_function,
    generate_excitation,
    wrap_phase,
)

logger = logging.getLogger(__name__)

MIN_CHAIN_NODES = 8
# Frequencies solved per batched linear solve
FREQUENCY_CHUNK = 256


def default_transducer_nodes(
    n_nodes: int,
    count: int = 4,
    spacing_nodes: Optional[int] = None,
) -> Dict[int, int]:
    """Evenly spaced transducers centred on the chain, numbered from 1"""
    if count < 1:
        raise ConfigurationError(f"transducer count must be >= 1 (got {count})")
    spacing = spacing_nodes or max(1, n_nodes // (2 * count))
    span = spacing * (count - 1)
    if span >= n_nodes:
        raise ConfigurationError(
            f"{count} transducers at spacing {spacing} do not fit on {n_nodes} nodes"
        )
    start = (n_nodes - 1 - span) // 2
    return {index + 1: start + index * spacing for index in range(count)}


@dataclass(frozen=True, eq=False)
class StructureModel:
    """
    Grounded spring chain: spring 0 ties node 0 to the clamp and spring j
    joins nodes j-1 and j. Damping is Rayleigh, C = alpha*M + beta*K.
    """

    masses: np.ndarray
    stiffnesses: np.ndarray
    alpha: float = 1.0
    beta: float = 1e-6
    transducer_nodes: Dict[int, int] = field(default_factory=dict)
    pitch_m: float = 0.02

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        stiffnesses = np.asarray(self.stiffnesses, dtype=float)
        object.__setattr__(self, 'masses', masses)
        object.__setattr__(self, 'stiffnesses', stiffnesses)
        object.__setattr__(self, 'transducer_nodes', {int(t): int(n) for t, n in self.transducer_nodes.items()})

        if masses.ndim != 1 or masses.size < 1:
            raise ConfigurationError("masses must be a non-empty 1-D sequence")
        if stiffnesses.shape != masses.shape:
            raise ConfigurationError(
                f"need one spring per node: {masses.size} masses, {stiffnesses.size} stiffnesses"
            )
        if np.any(masses <= 0):
            raise ConfigurationError("all masses must be > 0")
        if np.any(stiffnesses <= 0):
            raise ConfigurationError("all stiffnesses must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(f"Rayleigh coefficients must be >= 0 (got {self.alpha}, {self.beta})")
        if not self.pitch_m > 0:
            raise ConfigurationError(f"pitch_m must be > 0 (got {self.pitch_m})")

        nodes = list(self.transducer_nodes.values())
        if len(set(nodes)) != len(nodes):
            raise ConfigurationError(f"transducer nodes must be distinct (got {self.transducer_nodes})")
        for transducer, node in self.transducer_nodes.items():
            if not 0 <= node < masses.size:
                raise ConfigurationError(f"transducer {transducer} node {node} outside 0..{masses.size - 1}")

    @classmethod
    def chain(
        cls,
        n_nodes: int = 64,
        mass_kg: float = 0.05,
        stiffness_n_per_m: float = 2e6,
        alpha: float = 1.0,
        beta: float = 1e-6,
        pitch_m: float = 0.02,
        transducer_count: int = 4,
        spacing_nodes: Optional[int] = None,
        transducer_nodes: Optional[Dict[int, int]] = None,
    ) -> 'StructureModel':
        """Uniform chain with evenly spaced mid-chain transducers"""
        if n_nodes < MIN_CHAIN_NODES:
            raise ConfigurationError(f"chain needs at least {MIN_CHAIN_NODES} nodes (got {n_nodes})")
        if transducer_nodes is None:
            transducer_nodes = default_transducer_nodes(n_nodes, transducer_count, spacing_nodes)
        return cls(
            masses=np.full(n_nodes, mass_kg),
            stiffnesses=np.full(n_nodes, stiffness_n_per_m),
            alpha=alpha,
            beta=beta,
            transducer_nodes=transducer_nodes,
            pitch_m=pitch_m,
        )

    @property
    def n_nodes(self) -> int:
        return int(self.masses.size)

    @property
    def transducer_ids(self) -> List[int]:
        return sorted(self.transducer_nodes)

    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.masses)

    def stiffness_matrix(self) -> np.ndarray:
        k = self.stiffnesses
        n = self.n_nodes
        K = np.zeros((n, n))
        idx = np.arange(n)
        K[idx, idx] += k
        K[idx[:-1], idx[:-1]] += k[1:]
        K[idx[:-1], idx[1:]] -= k[1:]
        K[idx[1:], idx[:-1]] -= k[1:]
        return K

    def damping_matrix(self) -> np.ndarray:
        return self.alpha * self.mass_matrix() + self.beta * self.stiffness_matrix()

    def node_position(self, node: float) -> float:
        return float(node) * self.pitch_m

    def transducer_positions(self) -> Dict[int, float]:
        return {t: self.node_position(node) for t, node in self.transducer_nodes.items()}

    def nearest_transducer(self, node: int) -> int:
        """Transducer closest to ``node``; lower id on ties"""
        return min(self.transducer_nodes, key=lambda t: (abs(self.transducer_nodes[t] - node), t))


@dataclass(frozen=True)
class DamageSpec:
    site_node: int
    severity: float

    def __post_init__(self):
        if not 0 <= self.severity < 1:
            raise ConfigurationError(f"severity must be in [0, 1) (got {self.severity})")
        if self.site_node < 0:
            raise ConfigurationError(f"site_node must be >= 0 (got {self.site_node})")


def apply_damage(model: StructureModel, spec: DamageSpec) -> StructureModel:
    """Scale the springs on either side of the site node by (1 - severity)"""
    if spec.site_node >= model.n_nodes:
        raise ConfigurationError(f"damage site {spec.site_node} outside 0..{model.n_nodes - 1}")

    stiffnesses = model.stiffnesses.copy()
    stiffnesses[spec.site_node] *= 1.0 - spec.severity
    if spec.site_node + 1 < model.n_nodes:
        stiffnesses[spec.site_node + 1] *= 1.0 - spec.severity
    return dataclasses.replace(model, stiffnesses=stiffnesses)


def apply_damages(model: StructureModel, specs: Sequence[DamageSpec]) -> StructureModel:
    for spec in specs:
        model = apply_damage(model, spec)
    return model


def _first_singular_bin(system: np.ndarray) -> int:
    for index, matrix in enumerate(system):
        try:
            solution = np.linalg.solve(matrix, np.eye(matrix.shape[0]))
        except np.linalg.LinAlgError:
            return index
        if not np.all(np.isfinite(solution)):
            return index
    return 0


def receptance(
    model: StructureModel,
    freqs_hz: np.ndarray,
    actuator_nodes: Sequence[int],
    sensor_nodes: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Solve (K - w^2 M + i w C) X = E_a per frequency

    Returns:
        Complex array of shape (n_freqs, n_sensors, n_actuators)
    """
    freqs = np.asarray(freqs_hz, dtype=float)
    if freqs.ndim != 1 or not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
        raise ConfigurationError("frequencies must be finite and non-negative")
    sensors = list(actuator_nodes) if sensor_nodes is None else list(sensor_nodes)
    for node in list(actuator_nodes) + sensors:
        if not 0 <= node < model.n_nodes:
            raise ConfigurationError(f"node {node} outside 0..{model.n_nodes - 1}")

    M = model.mass_matrix()
    K = model.stiffness_matrix()
    C = model.damping_matrix()
    n = model.n_nodes
    rhs = np.zeros((n, len(actuator_nodes)))
    rhs[list(actuator_nodes), np.arange(len(actuator_nodes))] = 1.0

    out = np.empty((freqs.size, len(sensors), len(actuator_nodes)), dtype=complex)
    for start in range(0, freqs.size, FREQUENCY_CHUNK):
        w = 2 * np.pi * freqs[start:start + FREQUENCY_CHUNK]
        system = K[None] - (w ** 2)[:, None, None] * M[None] + 1j * w[:, None, None] * C[None]
        try:
            solution = np.linalg.solve(system, np.broadcast_to(rhs, (w.size, n, rhs.shape[1])))
        except np.linalg.LinAlgError:
            solution = None
        if solution is None or not np.all(np.isfinite(solution)):
            k = start + _first_singular_bin(system)
            raise SingularSystemError(f"system matrix singular at bin {k} ({freqs[k]} Hz)", bin_index=k)
        out[start:start + w.size] = solution[:, sensors, :]
    return out


def analytic_frf(
    model: StructureModel,
    actuator_node: int,
    sensor_node: int,
    freqs_hz: np.ndarray,
) -> TransferFunction:
    """Exact receptance between two nodes; coherence reported as 1"""
    h = receptance(model, freqs_hz, [actuator_node], [sensor_node])[:, 0, 0]
    return TransferFunction(
        actuator_id=actuator_node,
        sensor_id=sensor_node,
        freqs_hz=np.asarray(freqs_hz, dtype=float),
        magnitude=np.abs(h),
        phase_rad=wrap_phase(np.angle(h)),
        coherence=np.ones(h.shape),
    )


class StructureSimulator:
    """Synthesize actuation runs on one structure model"""

    def __init__(self, model: StructureModel, excitation: ExcitationConfig):
        if len(model.transducer_nodes) < 1:
            raise ConfigurationError("structure model has no transducers")
        self.model = model
        self.excitation = excitation
        self.n_samples = excitation.n_samples
        self.freqs_hz = np.fft.rfftfreq(self.n_samples, d=1.0 / excitation.sample_rate_hz)
        self._transducers = model.transducer_ids
        self._transfer: Optional[np.ndarray] = None
        self._transfer_lock = threading.Lock()

    def transfer_matrix(self) -> np.ndarray:
        """Receptance between all transducer nodes on the synthesis grid, solved once"""
        with self._transfer_lock:
            if self._transfer is None:
                nodes = [self.model.transducer_nodes[t] for t in self._transducers]
                logger.info(
                    f"🎲 Solving {self.model.n_nodes}-node model at {self.freqs_hz.size} frequencies "
                    f"for {len(nodes)} transducers"
                )
                self._transfer = receptance(self.model, self.freqs_hz, nodes, nodes)
        return self._transfer

    def simulate_response(self, actuator_id: int, noise_std: float = 0.0, seed: int = 0) -> TimeSeriesRecord:
        """
        One actuation run with every transducer recording

        Args:
            actuator_id: Transducer driven by the excitation
            noise_std: Sensor noise std as a fraction of each channel's RMS response
            seed: Seed for the excitation (random kind) and the sensor noise

        Returns:
            TimeSeriesRecord with one response channel per transducer
        """
        if actuator_id not in self.model.transducer_nodes:
            raise ConfigurationError(f"unknown actuator {actuator_id}")
        if noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0 (got {noise_std})")

        drive_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
        drive = generate_excitation(self.excitation, seed=int(drive_seq.generate_state(1)[0]))
        rng = np.random.default_rng(noise_seq)

        spectrum = np.fft.rfft(drive)
        column = self._transducers.index(actuator_id)
        transfer = self.transfer_matrix()[:, :, column]

        responses = {}
        for row, sensor in enumerate(self._transducers):
            clean = np.fft.irfft(transfer[:, row] * spectrum, n=self.n_samples)
            if noise_std > 0:
                rms = float(np.sqrt(np.mean(clean ** 2)))
                clean = clean + rng.standard_normal(self.n_samples) * noise_std * rms
            responses[sensor] = clean

        return TimeSeriesRecord(
            actuator_id=actuator_id,
            sample_rate_hz=self.excitation.sample_rate_hz,
            excitation=drive,
            responses=responses,
            excitation_config=self.excitation,
            seed=seed,
        )

    def run_cycle(
        self,
        noise_std: float = 0.0,
        seed: int = 0,
        params: Optional[SpectralParams] = None,
        transducer_ids: Optional[Sequence[int]] = None,
        label: str = "",
    ) -> SignatureSet:
        """Round-robin actuation: each transducer drives once while the others record"""
        records = self.cycle_records(noise_std, seed, transducer_ids)
        return signatures_from_records(records, params or _default_params(self.excitation), label=label)

    def cycle_records(
        self,
        noise_std: float = 0.0,
        seed: int = 0,
        transducer_ids: Optional[Sequence[int]] = None,
    ) -> List[TimeSeriesRecord]:
        ids = sorted(transducer_ids) if transducer_ids is not None else self._transducers
        if len(ids) < 2:
            raise ConfigurationError(f"a cycle needs at least 2 transducers (got {len(ids)})")
        children = np.random.SeedSequence(seed).spawn(len(ids))
        return [
            self.simulate_response(actuator, noise_std, int(child.generate_state(1)[0]))
            for actuator, child in zip(ids, children)
        ]


def _default_params(excitation: ExcitationConfig) -> SpectralParams:
    return SpectralParams(band_low_hz=excitation.band_low_hz, band_high_hz=excitation.band_high_hz)


def signatures_from_records(
    records: Sequence[TimeSeriesRecord],
    params: SpectralParams,
    transducer_ids: Optional[Sequence[int]] = None,
    label: str = "",
) -> SignatureSet:
    """Estimate every actuator->sensor pair of a round-robin cycle"""
    ids = set(transducer_ids) if transducer_ids is not None else {r.actuator_id for r in records}
    tfs = []
    for record in records:
        for sensor in record.channel_ids:
            if sensor == record.actuator_id or sensor not in ids:
                continue
            tfs.append(estimate_transfer_function(record, sensor, params))
    return SignatureSet.from_transfer_functions(tfs, label=label)


def simulate_response(
    model: StructureModel,
    excitation: ExcitationConfig,
    actuator_id: int,
    noise_std: float = 0.0,
    seed: int = 0,
) -> TimeSeriesRecord:
    return StructureSimulator(model, excitation).simulate_response(actuator_id, noise_std, seed)


def run_cycle(
    model: StructureModel,
    transducer_ids: Optional[Sequence[int]] = None,
    excitation: Optional[ExcitationConfig] = None,
    noise_std: float = 0.05,
    seed: int = 0,
    params: Optional[SpectralParams] = None,
    label: str = "",
) -> SignatureSet:
    simulator = StructureSimulator(model, excitation or ExcitationConfig())
    return simulator.run_cycle(noise_std, seed, params, transducer_ids, label)
