"""Spectra, SNR, differential peak finding and zero-span envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .emcouple import Trace

N_BINS = 2000
F_MAX = 120e6


class MixedTimebases(ValueError):
    pass


class ZeroNoise(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class FrequencyOutOfRange(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    bins: np.ndarray  # dBV (rms) per bin
    bin_width: float
    f_max: float = F_MAX
    n_averaged: int = 1

    def __post_init__(self):
        arr = np.asarray(self.bins, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("spectrum magnitudes must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "bins", arr)

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.bins.size) * self.bin_width

    @property
    def power(self) -> np.ndarray:
        return 10.0 ** (self.bins / 10.0)

    def bin_of(self, frequency: float) -> int:
        return int(round(frequency / self.bin_width))

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.bin_width == other.bin_width
            and self.n_averaged == other.n_averaged
            and np.array_equal(self.bins, other.bins)
        )

    __hash__ = None


@dataclass(frozen=True)
class Peak:
    frequency: float
    delta_db: float
    bin: int


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple[Peak, ...] = ()
    threshold_db: float = 6.0

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def __bool__(self):
        return bool(self.peaks)

    @property
    def frequencies(self) -> list[float]:
        return [p.frequency for p in self.peaks]

    def near(self, frequency: float, tolerance: float) -> list[Peak]:
        return [p for p in self.peaks if abs(p.frequency - frequency) <= tolerance]


@dataclass(frozen=True, eq=False)
class Envelope:
    center_frequency: float
    resolution_bandwidth: float
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0  # s from the start of the source record

    def __post_init__(self):
        if self.center_frequency > 0 and not self.resolution_bandwidth < self.center_frequency:
            raise ValueError("resolution bandwidth must be below the centre frequency")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate


# ---------------------------------------------------------------------------


def _check_timebase(traces: Sequence[Trace]) -> tuple[float, int]:
    if not traces:
        raise ValueError("need at least one trace")
    rate, n = traces[0].sample_rate, len(traces[0])
    for t in traces[1:]:
        if t.sample_rate != rate or len(t) != n:
            raise MixedTimebases("traces differ in sample rate or length")
    return rate, n


def power_spectrum(samples: np.ndarray) -> np.ndarray:
    """Hann-windowed power per rfft bin, scaled to V_rms**2 for bin-centred tones."""
    n = samples.size
    w = np.hanning(n)
    x = np.fft.rfft(samples * w)
    amp = np.abs(x) * 2.0 / w.sum()
    return amp**2 / 2.0


def spectrum(traces: Sequence[Trace] | Trace, n_bins: int = N_BINS, f_max: float = F_MAX) -> Spectrum:
    """Power-averaged Hann spectrum of one or more traces, in dBV."""
    if isinstance(traces, Trace):
        traces = [traces]
    rate, n = _check_timebase(traces)
    p = np.mean([power_spectrum(t.samples) for t in traces], axis=0)
    bin_width = rate / n
    keep = min(n_bins, int(f_max / bin_width) + 1, p.size)
    p = np.maximum(p[:keep], 1e-30)
    return Spectrum(bins=10.0 * np.log10(p), bin_width=bin_width, f_max=f_max, n_averaged=len(traces))


def pooled_rms(traces: Sequence[Trace]) -> float:
    return float(np.sqrt(np.mean(np.concatenate([t.samples for t in traces]) ** 2)))


def snr(signal_traces: Sequence[Trace], noise_traces: Sequence[Trace]) -> float:
    """20 log10 of pooled signal RMS over pooled noise RMS."""
    noise = pooled_rms(noise_traces)
    if noise == 0:
        raise ZeroNoise("noise traces have zero RMS")
    return 20.0 * math.log10(pooled_rms(signal_traces) / noise)


def smooth_power(power: np.ndarray, half_width: int) -> np.ndarray:
    if half_width <= 0:
        return power
    k = np.ones(2 * half_width + 1)
    num = np.convolve(power, k, mode="same")
    den = np.convolve(np.ones_like(power), k, mode="same")
    return num / den


def delta_db(live: Spectrum, baseline: Spectrum, smooth_bins: int = 0) -> np.ndarray:
    if live.bins.size != baseline.bins.size or live.bin_width != baseline.bin_width:
        raise GridMismatch("live and baseline spectra use different bin grids")
    a = smooth_power(live.power, smooth_bins)
    b = smooth_power(baseline.power, smooth_bins)
    return 10.0 * np.log10(a / b)


def diff_peaks(
    live: Spectrum,
    baseline: Spectrum,
    threshold_db: float = 6.0,
    smooth_bins: int = 8,
    merge_bins: int = 3,
) -> PeakSet:
    """Regions where ``live`` exceeds ``baseline`` by ``threshold_db``.

    Both spectra are first averaged in linear power over +-``smooth_bins``
    (a resolution-bandwidth filter); without it the per-bin scatter of
    5-trace averages alone crosses a 6 dB threshold in ~2% of noise bins.
    Runs of bins over threshold closer than ``merge_bins`` form one region,
    reported at the strongest live bin inside it.
    """
    d = delta_db(live, baseline, smooth_bins)
    above = np.flatnonzero(d >= threshold_db)
    if above.size == 0:
        return PeakSet(peaks=(), threshold_db=threshold_db)
    breaks = np.flatnonzero(np.diff(above) > merge_bins + 1)
    starts = np.concatenate(([above[0]], above[breaks + 1]))
    ends = np.concatenate((above[breaks], [above[-1]]))
    peaks = []
    for lo, hi in zip(starts, ends):
        i = int(lo + np.argmax(live.bins[lo : hi + 1]))
        peaks.append(Peak(frequency=float(i * live.bin_width), delta_db=float(d[lo : hi + 1].max()), bin=i))
    return PeakSet(peaks=tuple(peaks), threshold_db=threshold_db)


def zero_span(trace: Trace, f0: float, rbw: float = 2e6, order: int = 4, guard: float = 2.0) -> Envelope:
    """Magnitude envelope of ``trace`` around ``f0``, like a spectrum analyser
    in zero-span mode: complex mix to baseband, Butterworth low-pass at
    ``rbw`` (zero phase), decimation to 4 x ``rbw``.

    ``guard / rbw`` seconds are dropped at each end of the record, where the
    filter has not settled.
    """
    fs = trace.sample_rate
    if not 0 < f0 < fs / 2:
        raise FrequencyOutOfRange(f"f0 = {f0:g} Hz outside (0, {fs / 2:g})")
    if not 0 < rbw < fs / 2:
        raise FrequencyOutOfRange(f"rbw = {rbw:g} Hz outside (0, {fs / 2:g})")
    n = np.arange(len(trace))
    bb = trace.samples * np.exp(-2j * np.pi * f0 * n / fs)
    sos = signal.butter(order, rbw, btype="low", fs=fs, output="sos")
    bb = signal.sosfiltfilt(sos, bb)
    q = max(1, int(round(fs / (4.0 * rbw))))
    edge = int(math.ceil(guard / rbw * fs))
    if 2 * edge >= bb.size:
        raise ValueError("record too short for the settling guard")
    env = 2.0 * np.abs(bb[edge : bb.size - edge : q])
    return Envelope(center_frequency=f0, resolution_bandwidth=rbw, samples=env, sample_rate=fs / q, t0=edge / fs)


# ---------------------------------------------------------------------------
# exports


def write_spectrum_csv(spec: Spectrum, path: str | Path) -> None:
    lines = ["frequency_hz,magnitude_db"]
    lines += [f"{f:.4f},{m:.6f}" for f, m in zip(spec.frequencies, spec.bins)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_spectrum_csv(path: str | Path, n_averaged: int = 1) -> Spectrum:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    freqs, mags = data[:, 0], data[:, 1]
    width = float(freqs[1] - freqs[0]) if freqs.size > 1 else 0.0
    return Spectrum(bins=mags, bin_width=width, n_averaged=n_averaged)


def write_envelope_csv(env: Envelope, path: str | Path) -> None:
    lines = ["time_s,magnitude"]
    lines += [f"{t:.9e},{m:.9e}" for t, m in zip(env.times, env.samples)]
    Path(path).write_text("\n".join(lines) + "\n")
