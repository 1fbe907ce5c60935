"""Flux coupling from activity sources into programmed coils, the analog
front end, coil impedance, and an external-probe reference.

Coupling is a signed flux sum: every cell under the coil contributes its
winding number times a distance-weighted share of each source current,

    e(t) = -d/dt sum_c w(c) sum_s k0 / (1 + (d(s, c) / d0)**3) * i_s(t)

with ``d`` the lateral distance from the source centroid to the cell centre.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lattice import CoilGeometry, LatticeSpec

Centroid = tuple[float, float]  # (row, col) in lattice-node units

NOMINAL_VDD = 1.0
NOMINAL_TEMPERATURE = 25.0
VDD_RANGE = (0.8, 1.25)
TEMPERATURE_RANGE = (-40.0, 125.0)

TRACE_MAGIC = b"PSATRC1"
_TRACE_HEADER = struct.Struct("<IdIdd")
PROBE_INDEX = -1


class TimebaseMismatch(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class TraceFileError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingModel:
    k0: float = 2e-11  # V s / A per cell at zero distance
    d0: float = 16.0  # um
    exponent: float = 3.0
    probe_standoff: float = 150.0  # um
    probe_scale: float = 0.7993

    def __post_init__(self):
        if not (self.k0 > 0 and self.d0 > 0 and self.probe_standoff > 0):
            raise ValueError("k0, d0 and probe_standoff must be positive")

    def kernel(self, distance_um: np.ndarray) -> np.ndarray:
        return self.k0 / (1.0 + (distance_um / self.d0) ** self.exponent)


@dataclass(frozen=True)
class AcquisitionChain:
    amplifier_gain_db: float = 50.0
    amplifier_bandwidth: float = 200e6
    noise_floor: float = 4.8633e-6  # V rms referred to the amplifier input
    sample_rate: float = 240e6
    record_length: int = 4096
    adc_bits: int = 12
    adc_full_scale: float = 1.0  # V, clipping at +-full scale

    def __post_init__(self):
        if self.sample_rate < 240e6:
            raise ValueError("sample rate must cover the DC-120 MHz band (>= 240 MS/s)")
        n = self.record_length
        if n <= 0 or n & (n - 1):
            raise ValueError("record_length must be a power of two")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be non-negative")

    @property
    def gain(self) -> float:
        return 10.0 ** (self.amplifier_gain_db / 20.0)

    @property
    def record_duration(self) -> float:
        return self.record_length / self.sample_rate

    def response(self, f: np.ndarray) -> np.ndarray:
        """Single-pole amplifier transfer function (without gain)."""
        return 1.0 / (1.0 + 1j * f / self.amplifier_bandwidth)


@dataclass(frozen=True, eq=False)
class Trace:
    samples: np.ndarray
    sample_rate: float
    sensor_index: int
    coil: CoilGeometry | None = field(default=None, repr=False)
    environment: tuple[float, float] = (NOMINAL_VDD, NOMINAL_TEMPERATURE)
    schedule_id: str = ""
    t0: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("trace samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


# ---------------------------------------------------------------------------
# coupling


def cell_centres_um(spec: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
    n_rows, n_cols = spec.cell_shape
    rr, cc = np.meshgrid(np.arange(n_rows) + 0.5, np.arange(n_cols) + 0.5, indexing="ij")
    return rr * spec.segment_length, cc * spec.segment_length


def coupling_gain(
    winding: np.ndarray, centroid: Centroid, model: CouplingModel, spec: LatticeSpec, standoff: float = 0.0
) -> float:
    """Flux linkage per ampere of a source at ``centroid`` through a coil."""
    yr, xc = cell_centres_um(spec)
    d = np.hypot(yr - centroid[0] * spec.segment_length, xc - centroid[1] * spec.segment_length)
    if standoff:
        d = np.hypot(d, standoff)
    return float(np.sum(winding * model.kernel(d)))


def _flux_derivative(flux: np.ndarray, sample_rate: float) -> np.ndarray:
    return -np.gradient(flux, 1.0 / sample_rate)


def induced_voltage(
    coil: CoilGeometry,
    waveforms: Sequence[tuple[Centroid, np.ndarray]],
    model: CouplingModel,
    sample_rate: float,
    spec: LatticeSpec = LatticeSpec(),
    n_samples: int | None = None,
) -> np.ndarray:
    """Raw EMF across the coil terminals (central-difference derivative)."""
    if n_samples is None:
        n_samples = len(waveforms[0][1]) if waveforms else 0
    flux = np.zeros(n_samples)
    for centroid, current in waveforms:
        current = np.asarray(current, dtype=float)
        if current.shape != (n_samples,):
            raise TimebaseMismatch(f"waveform of {current.size} samples, expected {n_samples}")
        g = coupling_gain(coil.winding_map, centroid, model, spec)
        flux += g * current
    if n_samples < 2:
        return np.zeros(n_samples)
    return _flux_derivative(flux, sample_rate)


def probe_voltage(
    waveforms: Sequence[tuple[Centroid, np.ndarray]],
    model: CouplingModel,
    sample_rate: float,
    spec: LatticeSpec = LatticeSpec(),
    n_samples: int | None = None,
) -> np.ndarray:
    """EMF of a single-turn whole-die loop held ``probe_standoff`` above the die."""
    if n_samples is None:
        n_samples = len(waveforms[0][1]) if waveforms else 0
    ones = np.ones(spec.cell_shape)
    flux = np.zeros(n_samples)
    for centroid, current in waveforms:
        current = np.asarray(current, dtype=float)
        if current.shape != (n_samples,):
            raise TimebaseMismatch(f"waveform of {current.size} samples, expected {n_samples}")
        g = model.probe_scale * coupling_gain(ones, centroid, model, spec, standoff=model.probe_standoff)
        flux += g * current
    if n_samples < 2:
        return np.zeros(n_samples)
    return _flux_derivative(flux, sample_rate)


# ---------------------------------------------------------------------------
# analog front end


def amplify(e: np.ndarray, chain: AcquisitionChain) -> np.ndarray:
    """Single-pole low-pass and gain, applied in the frequency domain."""
    spec = np.fft.rfft(e)
    f = np.fft.rfftfreq(e.size, 1.0 / chain.sample_rate)
    return chain.gain * np.fft.irfft(spec * chain.response(f), n=e.size)


def quantize(x: np.ndarray, chain: AcquisitionChain) -> np.ndarray:
    fs = chain.adc_full_scale
    lsb = 2.0 * fs / (2**chain.adc_bits)
    return np.clip(np.round(x / lsb) * lsb, -fs, fs)


def acquire(
    e: np.ndarray,
    chain: AcquisitionChain,
    seed,
    sensor_index: int = 0,
    coil: CoilGeometry | None = None,
    environment: tuple[float, float] = (NOMINAL_VDD, NOMINAL_TEMPERATURE),
    schedule_id: str = "",
    t0: float = 0.0,
) -> Trace:
    e = np.asarray(e, dtype=float)
    rng = np.random.default_rng(seed)
    y = amplify(e, chain)
    if chain.noise_floor > 0:
        y = y + chain.gain * chain.noise_floor * rng.standard_normal(e.size)
    y = quantize(y, chain)
    return Trace(
        samples=y,
        sample_rate=chain.sample_rate,
        sensor_index=sensor_index,
        coil=coil,
        environment=environment,
        schedule_id=schedule_id,
        t0=t0,
    )


def external_probe_trace(
    waveforms: Sequence[tuple[Centroid, np.ndarray]],
    model: CouplingModel,
    chain: AcquisitionChain,
    seed,
    spec: LatticeSpec = LatticeSpec(),
    n_samples: int | None = None,
    **trace_kw,
) -> Trace:
    n = chain.record_length if n_samples is None else n_samples
    e = probe_voltage(waveforms, model, chain.sample_rate, spec, n_samples=n)
    return acquire(e, chain, seed, sensor_index=PROBE_INDEX, **trace_kw)


# ---------------------------------------------------------------------------
# impedance

# overdrive-limited channel resistance; exponents keep each factor within
# 4 dB over its full range
_VTH = 0.35
_ALPHA_V = 0.6
_BETA_T = 0.8


def _r_vdd(vdd: float) -> float:
    return ((NOMINAL_VDD - _VTH) / (vdd - _VTH)) ** _ALPHA_V


def _r_temp(temperature: float) -> float:
    return ((temperature + 273.15) / (NOMINAL_TEMPERATURE + 273.15)) ** _BETA_T


def coil_impedance(
    coil: CoilGeometry,
    vdd: float = NOMINAL_VDD,
    temperature: float = NOMINAL_TEMPERATURE,
    spec: LatticeSpec = LatticeSpec(),
) -> float:
    """Series resistance of the coil path at a supply/temperature corner."""
    if not VDD_RANGE[0] <= vdd <= VDD_RANGE[1]:
        raise OutOfRange(f"vdd {vdd} V outside {VDD_RANGE}")
    if not TEMPERATURE_RANGE[0] <= temperature <= TEMPERATURE_RANGE[1]:
        raise OutOfRange(f"temperature {temperature} C outside {TEMPERATURE_RANGE}")
    switches = coil.n_switches * spec.switch_resistance * _r_vdd(vdd) * _r_temp(temperature)
    return switches + coil.n_segments * spec.segment_resistance


def divider_gain(coil_ohms: float, load_ohms: float) -> float:
    """Voltage ratio into an amplifier of input resistance ``load_ohms``."""
    return load_ohms / (load_ohms + coil_ohms)


# ---------------------------------------------------------------------------
# trace files


def write_trace(trace: Trace, path: str | Path) -> None:
    idx = trace.sensor_index & 0xFFFFFFFF
    vdd, temp = trace.environment
    data = TRACE_MAGIC + _TRACE_HEADER.pack(idx, trace.sample_rate, len(trace), vdd, temp)
    data += np.asarray(trace.samples, dtype="<f4").tobytes()
    Path(path).write_bytes(data)


def read_trace(path: str | Path) -> Trace:
    raw = Path(path).read_bytes()
    if not raw.startswith(TRACE_MAGIC):
        raise TraceFileError("bad trace magic")
    off = len(TRACE_MAGIC)
    if len(raw) < off + _TRACE_HEADER.size:
        raise TraceFileError("truncated trace header")
    idx, rate, n, vdd, temp = _TRACE_HEADER.unpack_from(raw, off)
    off += _TRACE_HEADER.size
    if len(raw) != off + 4 * n:
        raise TraceFileError(f"expected {n} samples, file holds {(len(raw) - off) / 4:g}")
    samples = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(float)
    if idx == 0xFFFFFFFF:
        idx = PROBE_INDEX
    return Trace(samples=samples, sample_rate=rate, sensor_index=idx, environment=(vdd, temp))


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    """Plotting mirror of a trace file: ``index,volts`` with float32 values."""
    volts = np.asarray(trace.samples, dtype="<f4").tolist()
    lines = ["index,volts"] + [f"{i},{v!r}" for i, v in enumerate(volts)]
    Path(path).write_text("\n".join(lines) + "\n")
