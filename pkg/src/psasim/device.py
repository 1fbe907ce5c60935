"""A simulated test chip with its PSA: programs coils and records traces.

Traces are taken in consecutive windows spaced a fixed number of encryption
periods apart, so every window starts at an encryption boundary (the scope
triggers on the chip's own activity). Each acquisition draws its noise from
an independent stream keyed by (seed, coil stream, trace index), which keeps
results independent of acquisition order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import chipmodel as cm
from . import emcouple as em
from .lattice import CoilGeometry, LatticeSpec, preset_coil


@dataclass
class Device:
    spec: LatticeSpec = field(default_factory=LatticeSpec)
    floorplan: cm.Floorplan = field(default_factory=cm.default_floorplan)
    coupling: em.CouplingModel = field(default_factory=em.CouplingModel)
    chain: em.AcquisitionChain = field(default_factory=em.AcquisitionChain)
    schedule: cm.StimulusSchedule = field(default_factory=cm.default_schedule)
    params: cm.ActivityParams = field(default_factory=cm.ActivityParams)
    enabled: frozenset = frozenset()
    aes_enabled: bool = True
    seed: int = 0
    windows_per_trace: int = 10  # encryption periods between trace starts
    oversample: int = 4
    environment: tuple[float, float] = (em.NOMINAL_VDD, em.NOMINAL_TEMPERATURE)
    schedule_id: str = "default"

    def __post_init__(self):
        self.enabled = frozenset(self.enabled)
        self._currents: dict[int, list] = {}
        self._coils: dict[int, CoilGeometry] = {}

    # -- configuration -----------------------------------------------------

    def with_trojans(self, enabled) -> "Device":
        return replace(self, enabled=frozenset(enabled))

    def with_chain(self, **changes) -> "Device":
        return replace(self, chain=replace(self.chain, **changes))

    def sources(self) -> list[cm.ActivitySource]:
        return cm.sources_for(self.floorplan, self.enabled, self.params, self.aes_enabled)

    @property
    def trace_spacing(self) -> float:
        return self.windows_per_trace * self.params.encryption_period_cycles / self.floorplan.clock_frequency

    def sensor_coil(self, index: int) -> CoilGeometry:
        if index not in self._coils:
            self._coils[index] = preset_coil(index, self.spec)
        return self._coils[index]

    # -- synthesis ---------------------------------------------------------

    def timebase(self, trace_index: int) -> cm.Timebase:
        fs = self.chain.sample_rate * self.oversample
        # quarter-sample offset keeps sample instants off clock edges
        t0 = trace_index * self.trace_spacing + 0.25 / fs
        return cm.Timebase(t0=t0, sample_rate=fs, n_samples=self.chain.record_length * self.oversample)

    def source_currents(self, trace_index: int) -> list[tuple[em.Centroid, np.ndarray]]:
        if trace_index not in self._currents:
            tb = self.timebase(trace_index)
            out = []
            for s in self.sources():
                i = cm.current_waveform(s, self.schedule, tb, self.floorplan)
                if np.any(i):
                    out.append((self.floorplan.block(s.block).centroid, i))
            if len(self._currents) > 64:
                self._currents.clear()
            self._currents[trace_index] = out
        return self._currents[trace_index]

    def emf(self, coil: CoilGeometry, trace_index: int) -> np.ndarray:
        tb = self.timebase(trace_index)
        e = em.induced_voltage(coil, self.source_currents(trace_index), self.coupling, tb.sample_rate, self.spec, tb.n_samples)
        return e[:: self.oversample]

    def probe_emf(self, trace_index: int) -> np.ndarray:
        tb = self.timebase(trace_index)
        e = em.probe_voltage(self.source_currents(trace_index), self.coupling, tb.sample_rate, self.spec, tb.n_samples)
        return e[:: self.oversample]

    def noise_seed(self, stream: int, trace_index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFF, trace_index])

    # -- acquisition -------------------------------------------------------

    def acquire(self, coil: CoilGeometry, trace_index: int, sensor_index: int = 0, stream: int | None = None) -> em.Trace:
        stream = sensor_index if stream is None else stream
        return em.acquire(
            self.emf(coil, trace_index),
            self.chain,
            self.noise_seed(stream, trace_index),
            sensor_index=sensor_index,
            coil=coil,
            environment=self.environment,
            schedule_id=self.schedule_id,
            t0=self.timebase(trace_index).t0,
        )

    def acquire_sensor(self, index: int, trace_index: int) -> em.Trace:
        return self.acquire(self.sensor_coil(index), trace_index, sensor_index=index)

    def acquire_probe(self, trace_index: int) -> em.Trace:
        return em.acquire(
            self.probe_emf(trace_index),
            self.chain,
            self.noise_seed(0xFFFF, trace_index),
            sensor_index=em.PROBE_INDEX,
            environment=self.environment,
            schedule_id=self.schedule_id,
            t0=self.timebase(trace_index).t0,
        )

    def trigger_windows(self, trace_index: int) -> np.ndarray:
        """Boolean mask over the record: True inside T2-triggering encryptions."""
        fs = self.chain.sample_rate
        t = self.timebase(trace_index).t0 + np.arange(self.chain.record_length) / fs
        p = self.params
        n_enc, phase = cm._encryption_windows(t, self.floorplan.clock_frequency, p)
        hit = self.schedule.trigger_mask(n_enc, p.t2_pattern)
        return hit & (phase < p.round_cycles)
