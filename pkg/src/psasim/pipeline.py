"""Self-referenced Trojan detection: enrollment, scanning, localization,
classification and time-to-detect accounting.

The only reference the pipeline ever consults is the same device's own
spectrum recorded while every Trojan is dormant. Enrollment and live
scanning use disjoint trace windows of one device timeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp
from .device import Device
from .emcouple import AcquisitionChain
from .lattice import Rect, compile_coil, preset_region, rectangle_coil

LIVE_START = 100  # first live trace window, after the enrollment windows
DEFAULT_LATENCY = 0.5e-3  # s of processing per trace
CLASSES = ("T1", "T2", "T3", "T4", "unknown")

# noise streams for coils that are not presets
_LOCALIZE_STREAM = 0x10000
_CLASSIFY_STREAM = 0x20000


class NotEnrolled(RuntimeError):
    pass


class NotDetected(RuntimeError):
    pass


class BaselineFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# enrollment


@dataclass
class BaselineStore:
    spectra: dict[int, dsp.Spectrum] = field(default_factory=dict)
    seed: int = 0
    schedule_id: str = ""
    environment: tuple[float, float] = (1.0, 25.0)
    n_traces: int = 5

    @property
    def sensors(self) -> list[int]:
        return sorted(self.spectra)

    def __getitem__(self, sensor: int) -> dsp.Spectrum:
        try:
            return self.spectra[sensor]
        except KeyError:
            raise NotEnrolled(f"sensor {sensor} has no baseline") from None

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "schedule_id": self.schedule_id,
            "environment": list(self.environment),
            "n_traces": self.n_traces,
            "spectra": {
                str(k): {
                    "bin_width": s.bin_width,
                    "f_max": s.f_max,
                    "n_averaged": s.n_averaged,
                    "bins": [float(v) for v in s.bins],
                }
                for k, s in sorted(self.spectra.items())
            },
        }
        return json.dumps(doc, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BaselineStore":
        try:
            doc = json.loads(Path(path).read_text())
            spectra = {
                int(k): dsp.Spectrum(
                    bins=np.asarray(v["bins"], dtype=float),
                    bin_width=float(v["bin_width"]),
                    f_max=float(v["f_max"]),
                    n_averaged=int(v["n_averaged"]),
                )
                for k, v in doc["spectra"].items()
            }
            return cls(
                spectra=spectra,
                seed=int(doc["seed"]),
                schedule_id=str(doc["schedule_id"]),
                environment=tuple(float(x) for x in doc["environment"]),
                n_traces=int(doc["n_traces"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise BaselineFileError(f"{path}: {exc}") from exc


def enroll(device: Device, sensors: Iterable[int], n_traces: int = 5) -> BaselineStore:
    """Average ``n_traces`` dormant-state traces per sensor.

    Every Trojan is held inactive for the enrollment windows, whatever
    ``device.enabled`` says about the later live phase.
    """
    if n_traces < 1:
        raise ValueError("n_traces must be positive")
    dormant = device.with_trojans(())
    spectra = {}
    for s in sorted(set(sensors)):
        spectra[s] = dsp.spectrum([dormant.acquire_sensor(s, k) for k in range(n_traces)])
    return BaselineStore(
        spectra=spectra,
        seed=device.seed,
        schedule_id=device.schedule_id,
        environment=device.environment,
        n_traces=n_traces,
    )


# ---------------------------------------------------------------------------
# detection


@dataclass
class DetectionReport:
    verdict: str = "clean"
    peaks: dict[int, dsp.PeakSet] = field(default_factory=dict)
    heat_map: dict[int, float] = field(default_factory=dict)
    located_sensor: int | None = None
    refined_region: Rect | None = None
    trojan_class: str | None = None
    traces_used: int = 0
    mttd: float | None = None

    @property
    def detected(self) -> bool:
        return self.verdict == "trojan_detected"

    def peak_frequency(self, sensor: int | None = None) -> float:
        """Strongest differential peak of ``sensor`` (default: the located one)."""
        if not self.detected:
            raise NotDetected("no Trojan was detected")
        sensor = self.located_sensor if sensor is None else sensor
        ps = self.peaks.get(sensor)
        if not ps:
            raise NotDetected(f"sensor {sensor} shows no differential peak")
        return max(ps, key=lambda p: (p.delta_db, -p.frequency)).frequency

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "peaks": {
                str(k): [{"frequency_hz": p.frequency, "delta_db": p.delta_db, "bin": p.bin} for p in ps]
                for k, ps in sorted(self.peaks.items())
            },
            "heat_map": {str(k): v for k, v in sorted(self.heat_map.items())},
            "located_sensor": self.located_sensor,
            "refined_region": list(self.refined_region) if self.refined_region is not None else None,
            "trojan_class": self.trojan_class,
            "traces_used": self.traces_used,
            "mttd": self.mttd,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def write_heat_map_csv(self, path: str | Path) -> None:
        lines = ["sensor_index,delta_db"] + [f"{k},{v:.6f}" for k, v in sorted(self.heat_map.items())]
        Path(path).write_text("\n".join(lines) + "\n")


def scan_detect(
    store: BaselineStore,
    device: Device,
    budget: int = 10,
    threshold_db: float = 6.0,
    n_average: int = 5,
    start_index: int = LIVE_START,
    smooth_bins: int = 8,
) -> DetectionReport:
    """Round-robin scan of every enrolled sensor.

    Each round records one trace per sensor. From round ``n_average`` on,
    every sensor is judged on the average of its latest ``n_average``
    traces; the scan stops after the first round in which any sensor shows
    a differential peak. ``traces_used`` counts rounds, i.e. traces per
    sensor, so it never exceeds ``budget``.
    """
    if not store.spectra:
        raise NotEnrolled("baseline store is empty")
    if budget < 1 or n_average < 1:
        raise ValueError("budget and n_average must be positive")
    sensors = store.sensors
    n_average = min(n_average, budget)
    history: dict[int, list] = {s: [] for s in sensors}
    report = DetectionReport()
    for rnd in range(1, budget + 1):
        for s in sensors:
            history[s].append(device.acquire_sensor(s, start_index + rnd - 1))
        if rnd < n_average:
            continue
        peaks, heat = {}, {}
        for s in sensors:
            live = dsp.spectrum(history[s][-n_average:])
            base = store[s]
            peaks[s] = dsp.diff_peaks(live, base, threshold_db, smooth_bins)
            heat[s] = float(np.max(dsp.delta_db(live, base, smooth_bins)))
        report = DetectionReport(peaks=peaks, heat_map=heat, traces_used=rnd)
        if any(peaks.values()):
            report.verdict = "trojan_detected"
            report.located_sensor = max(sensors, key=lambda s: (heat[s], -s))
            report.refined_region = preset_region(report.located_sensor, device.spec)
            break
    return report


def mttd(report: DetectionReport, chain: AcquisitionChain, latency: float = DEFAULT_LATENCY) -> float:
    """Time to detect: every trace costs its record length plus processing."""
    if not report.detected:
        raise NotDetected("no detection to time")
    return report.traces_used * (chain.record_duration + latency)


# ---------------------------------------------------------------------------
# localization


def split_quadrants(rect: Rect) -> list[Rect]:
    """Four half-size rectangles overlapping by one cell, ordered top-left,
    top-right, bottom-left, bottom-right."""
    r0, r1, c0, c1 = rect

    def halves(a, b):
        h = (b - a) // 2
        return (a, a + h + 1), (a + h, b)

    rows, cols = halves(r0, r1), halves(c0, c1)
    return [(r[0], r[1], c[0], c[1]) for r in rows for c in cols]


def line_level_db(spec: dsp.Spectrum, frequency: float, smooth_bins: int = 8) -> float:
    """Smoothed power at ``frequency``, in dB. Every coil shares the same
    front-end noise, so levels of different coils compare directly."""
    p = dsp.smooth_power(spec.power, smooth_bins)
    return float(10.0 * np.log10(p[spec.bin_of(frequency)]))


def quadrant_levels(
    device: Device, rect: Rect, frequency: float, n_traces: int = 5, start_index: int = LIVE_START, depth: int = 0
) -> list[float]:
    levels = []
    for q, sub in enumerate(split_quadrants(rect)):
        bitmap, taps = rectangle_coil(sub, device.spec)
        coil = compile_coil(bitmap, taps, device.spec)
        stream = _LOCALIZE_STREAM + 4 * depth + q
        traces = [device.acquire(coil, start_index + k, sensor_index=-2, stream=stream) for k in range(n_traces)]
        levels.append(line_level_db(dsp.spectrum(traces), frequency))
    return levels


def localize(
    report: DetectionReport, device: Device, depth: int = 2, n_traces: int = 5, start_index: int = LIVE_START
) -> Rect:
    """Shrink the located preset region by reprogramming quadrant coils.

    At each step the four overlapping half-size coils are measured at the
    detected peak frequency; the strongest one (lowest index on ties) is
    kept.
    """
    if not report.detected:
        raise NotDetected("nothing to localize")
    rect = preset_region(report.located_sensor, device.spec)
    f = report.peak_frequency()
    for d in range(depth):
        if min(rect[1] - rect[0], rect[3] - rect[2]) < 5:
            break  # quadrants would be narrower than a legal coil
        levels = quadrant_levels(device, rect, f, n_traces, start_index, d)
        best = int(np.argmax(levels))  # argmax keeps the first maximum
        rect = split_quadrants(rect)[best]
    report.refined_region = rect
    return rect


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class EnvelopeFeatures:
    period: float  # s, strongest autocorrelation peak (0 if none)
    period_strength: float  # normalised autocorrelation at that lag
    duty_cycle: float  # fraction of time above the mid level
    flatness: float  # std / mean
    code_sidelobe: float  # largest autocorrelation beyond two chip lengths
    trigger_alignment: float  # mean level inside / outside trigger windows

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class ClassSignature:
    name: str
    # (feature name, low, high), all of which must hold
    bounds: tuple[tuple[str, float, float], ...]

    def matches(self, features: EnvelopeFeatures) -> bool:
        values = features.as_dict()
        return all(lo <= values[k] <= hi for k, lo, hi in self.bounds)


INF = math.inf
DEFAULT_SIGNATURES = (
    ClassSignature("T1", (("period", 1.2e-6, 1.47e-6), ("period_strength", 0.5, INF))),
    ClassSignature("T2", (("trigger_alignment", 3.0, INF),)),
    ClassSignature("T3", (("flatness", 0.2, INF), ("code_sidelobe", -INF, 0.45))),
    ClassSignature("T4", (("flatness", 0.0, 0.05),)),
)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(np.abs(f) ** 2)[:n]
    # unbiased: divide by the overlap length
    acf = acf / np.arange(n, 0, -1)
    return acf / acf[0] if acf[0] > 0 else np.zeros(n)


def envelope_features(
    envelopes: Sequence[dsp.Envelope],
    trigger_masks: Sequence[np.ndarray] | None = None,
    chip_length: float = 1e-6,
    min_period: float = 0.5e-6,
) -> EnvelopeFeatures:
    """Pooled features of several zero-span envelopes of the same line."""
    rate = envelopes[0].sample_rate
    acfs = [_autocorrelation(e.samples) for e in envelopes]
    n = min(a.size for a in acfs)
    acf = np.mean([a[:n] for a in acfs], axis=0)
    max_lag = n // 3
    lo = max(1, int(math.ceil(min_period * rate)))
    seg = acf[lo:max_lag]
    period, strength = 0.0, 0.0
    if seg.size >= 3:
        inner = np.flatnonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:])) + 1
        if inner.size:
            # harmonics of the period peak about as high; keep the shortest lag
            top = seg[inner].max()
            best = inner[np.flatnonzero(seg[inner] >= top - 0.2 * abs(top))[0]]
            period, strength = (lo + best) / rate, float(seg[best])
    code_lo = int(math.ceil(2 * chip_length * rate))
    side = acf[code_lo:max_lag]
    code_sidelobe = float(np.max(np.abs(side))) if side.size else 1.0

    flat = [float(np.std(e.samples) / np.mean(e.samples)) for e in envelopes]
    duty = []
    for e in envelopes:
        mid = 0.5 * (e.samples.min() + e.samples.max())
        duty.append(float(np.mean(e.samples > mid)))

    alignment = 1.0
    if trigger_masks is not None:
        inside, outside = [], []
        for e, m in zip(envelopes, trigger_masks):
            m = np.asarray(m, dtype=bool)[: e.samples.size]
            inside.append(e.samples[m])
            outside.append(e.samples[~m])
        inside, outside = np.concatenate(inside), np.concatenate(outside)
        if inside.size and outside.size and outside.mean() > 0:
            alignment = float(inside.mean() / outside.mean())
    return EnvelopeFeatures(
        period=period,
        period_strength=strength,
        duty_cycle=float(np.mean(duty)),
        flatness=float(np.mean(flat)),
        code_sidelobe=code_sidelobe,
        trigger_alignment=alignment,
    )


def match_signature(features: EnvelopeFeatures, signatures: Sequence[ClassSignature] = DEFAULT_SIGNATURES) -> str:
    for sig in signatures:
        if sig.matches(features):
            return sig.name
    return "unknown"


def zero_span_envelopes(
    device: Device,
    sensor: int,
    frequency: float,
    n_envelopes: int = 3,
    rbw: float = 2e6,
    start_index: int = LIVE_START,
) -> tuple[list[dsp.Envelope], list[np.ndarray]]:
    envs, masks = [], []
    for k in range(n_envelopes):
        idx = start_index + k
        tr = device.acquire(device.sensor_coil(sensor), idx, sensor_index=sensor, stream=_CLASSIFY_STREAM + sensor)
        env = dsp.zero_span(tr, frequency, rbw)
        q = int(round(tr.sample_rate / env.sample_rate))
        edge = int(round(env.t0 * tr.sample_rate))
        envs.append(env)
        masks.append(device.trigger_windows(idx)[edge::q][: env.samples.size])
    return envs, masks


def classify(
    device: Device,
    sensor: int,
    frequency: float,
    n_envelopes: int = 3,
    signatures: Sequence[ClassSignature] = DEFAULT_SIGNATURES,
    rbw: float = 2e6,
    start_index: int = LIVE_START,
) -> tuple[str, EnvelopeFeatures]:
    """Rule-based class of the emitter behind ``frequency`` on ``sensor``.

    The trigger windows come from the tester's own knowledge of which
    plaintexts it submitted, not from any reference device.
    """
    envs, masks = zero_span_envelopes(device, sensor, frequency, n_envelopes, rbw, start_index)
    chip = 1.0 / device.params.t3_chip_rate
    feats = envelope_features(envs, masks, chip_length=chip)
    return match_signature(feats, signatures), feats


# ---------------------------------------------------------------------------
# end to end


@dataclass(frozen=True)
class PipelineSettings:
    budget: int = 10
    threshold_db: float = 6.0
    n_average: int = 5
    smooth_bins: int = 8
    refinement_depth: int = 2
    n_envelopes: int = 3
    rbw: float = 2e6
    latency: float = DEFAULT_LATENCY
    start_index: int = LIVE_START
    signatures: tuple[ClassSignature, ...] = DEFAULT_SIGNATURES


def run_pipeline(store: BaselineStore, device: Device, settings: PipelineSettings = PipelineSettings()) -> DetectionReport:
    """Scan, then localize, classify and time any detection."""
    s = settings
    report = scan_detect(store, device, s.budget, s.threshold_db, s.n_average, s.start_index, s.smooth_bins)
    if not report.detected:
        return report
    localize(report, device, s.refinement_depth, s.n_average, s.start_index)
    f = report.peak_frequency()
    report.trojan_class, _ = classify(
        device, report.located_sensor, f, s.n_envelopes, s.signatures, s.rbw, s.start_index
    )
    report.mttd = mttd(report, device.chain, s.latency)
    return report
