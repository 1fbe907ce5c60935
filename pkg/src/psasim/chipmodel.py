"""AES-128 test-chip floorplan and switching-current activity of its blocks.

Every source current is a band-limited envelope multiplying clock-harmonic
carriers. The AES core modulates the odd harmonics of the clock with its
per-round activity; each Trojan adds components offset from the clock
harmonics by ``f_mod`` and shaped by a trigger-specific envelope.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .lattice import Rect


class SourceKind(str, enum.Enum):
    AES_CORE = "AES_CORE"
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"


TROJANS = (SourceKind.T1, SourceKind.T2, SourceKind.T3, SourceKind.T4)

# standard-cell counts of the test chip
GATE_COUNTS = {
    SourceKind.AES_CORE: 28806,
    SourceKind.T1: 1881,
    SourceKind.T2: 2132,
    SourceKind.T3: 329,
    SourceKind.T4: 2181,
}


class TimebaseTooCoarse(ValueError):
    pass


class StimulusFileError(ValueError):
    pass


@dataclass(frozen=True)
class Timebase:
    t0: float
    sample_rate: float
    n_samples: int

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Block:
    name: str
    rect: Rect  # cell rows [r0, r1), cell cols [c0, c1)
    relative_amplitude: float

    @property
    def centroid(self) -> tuple[float, float]:
        """(row, col) in lattice-node units."""
        r0, r1, c0, c1 = self.rect
        return ((r0 + r1) / 2.0, (c0 + c1) / 2.0)


@dataclass(frozen=True)
class Floorplan:
    die: tuple[int, int] = (35, 35)
    blocks: tuple[Block, ...] = ()
    clock_frequency: float = 33e6
    current_per_gate: float = 1e-6  # A, peak switching current per standard cell

    def __post_init__(self):
        for b in self.blocks:
            r0, r1, c0, c1 = b.rect
            if not (0 <= r0 < r1 <= self.die[0] and 0 <= c0 < c1 <= self.die[1]):
                raise ValueError(f"block {b.name} rectangle {b.rect} outside die {self.die}")
            if not b.relative_amplitude > 0:
                raise ValueError(f"block {b.name} amplitude must be positive")

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def peak_current(self, name: str) -> float:
        return self.block(name).relative_amplitude * GATE_COUNTS[SourceKind.AES_CORE] * self.current_per_gate


def default_floorplan() -> Floorplan:
    """AES core over the centre-right of the die, all four Trojans packed into
    the part of sensor 10 that no neighbouring preset covers (cells 19..23)."""
    aes = GATE_COUNTS[SourceKind.AES_CORE]
    blocks = [
        Block("AES_CORE", (8, 33, 10, 35), 1.0),
        Block("T1", (19, 21, 19, 21), GATE_COUNTS[SourceKind.T1] / aes),
        Block("T2", (19, 21, 22, 24), GATE_COUNTS[SourceKind.T2] / aes),
        Block("T3", (22, 24, 19, 21), GATE_COUNTS[SourceKind.T3] / aes),
        Block("T4", (22, 24, 22, 24), GATE_COUNTS[SourceKind.T4] / aes),
    ]
    return Floorplan(blocks=tuple(blocks))


@dataclass(frozen=True)
class ActivityParams:
    """Modulation parameters shared by all sources."""

    max_harmonic_frequency: float = 120e6
    activity_bandwidth: float = 8e6
    trojan_bandwidth: float = 4e6
    n_rounds: int = 10
    cycles_per_round: int = 4
    encryption_period_cycles: int = 64
    round_amplitudes: tuple[float, ...] = (1.0,) * 9 + (0.8,)
    idle_level: float = 0.0
    f_mod: float = 15e6
    # (harmonic order, +1 upper / -1 lower sideband)
    sidebands: tuple[tuple[int, int], ...] = ((1, 1), (3, -1))
    t1_carrier: float = 750e3
    t1_counter_bits: int = 21
    t1_counter_start: int = (1 << 21) - 1
    t1_active_fraction: float = 0.5
    t1_baseband_fraction: float = 0.1
    t2_pattern: bytes = b"\xaa\xaa"
    t3_chip_rate: float = 1e6
    t3_seed: int = 0x4A5B
    t4_dc_fraction: float = 0.5

    @property
    def round_cycles(self) -> int:
        return self.n_rounds * self.cycles_per_round


@dataclass(frozen=True)
class ActivitySource:
    block: str
    kind: SourceKind
    enabled: bool = True
    params: ActivityParams = field(default_factory=ActivityParams)


@dataclass(frozen=True)
class StimulusSchedule:
    plaintexts: tuple[bytes, ...] = ()
    duration: float = 1.0
    # (time_s, trojan name, enabled) in time order
    events: tuple[tuple[float, str, bool], ...] = ()

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("schedule duration must be positive")
        for p in self.plaintexts:
            if len(p) != 16:
                raise ValueError("plaintext blocks are 16 bytes")

    def enabled_at(self, name: str, t: np.ndarray, default: bool) -> np.ndarray:
        state = np.full(np.shape(t), default, dtype=bool)
        for when, who, on in sorted(self.events):
            if who == name:
                state = np.where(t >= when, on, state)
        return state

    def trigger_mask(self, n_encryptions: np.ndarray, pattern: bytes) -> np.ndarray:
        """Which encryption indices carry a plaintext starting with ``pattern``."""
        if not self.plaintexts:
            return np.zeros(np.shape(n_encryptions), dtype=bool)
        hits = np.array([p.startswith(pattern) for p in self.plaintexts])
        return hits[np.mod(n_encryptions, len(self.plaintexts))]


def default_schedule(n_plaintexts: int = 12, seed: int = 2024) -> StimulusSchedule:
    """Random plaintexts, every third one carrying the T2 trigger prefix."""
    rng = np.random.default_rng(seed)
    pts = []
    for i in range(n_plaintexts):
        block = bytearray(rng.integers(0, 256, 16, dtype=np.uint8).tobytes())
        if i % 3 == 0:
            block[0:2] = b"\xaa\xaa"
        elif block[0:2] == b"\xaa\xaa":
            block[1] ^= 0xFF
        pts.append(bytes(block))
    return StimulusSchedule(plaintexts=tuple(pts))


def idle_schedule() -> StimulusSchedule:
    return StimulusSchedule(plaintexts=())


def parse_stimulus(text: str) -> StimulusSchedule:
    pts: list[bytes] = []
    events: list[tuple[float, str, bool]] = []
    duration = 1.0
    valid = {k.value for k in TROJANS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "pt" and len(tok) == 2:
                if len(tok[1]) != 32:
                    raise StimulusFileError(f"line {lineno}: plaintext must be 32 hex chars")
                pts.append(bytes.fromhex(tok[1]))
            elif tok[0] in ("enable", "disable") and len(tok) == 3:
                if tok[1] not in valid:
                    raise StimulusFileError(f"line {lineno}: unknown Trojan '{tok[1]}'")
                events.append((float(tok[2]), tok[1], tok[0] == "enable"))
            elif tok[0] == "duration" and len(tok) == 2:
                duration = float(tok[1])
            else:
                raise StimulusFileError(f"line {lineno}: cannot parse '{line}'")
        except ValueError as exc:
            if isinstance(exc, StimulusFileError):
                raise
            raise StimulusFileError(f"line {lineno}: {exc}") from None
    return StimulusSchedule(plaintexts=tuple(pts), duration=duration, events=tuple(sorted(events)))


def format_stimulus(schedule: StimulusSchedule) -> str:
    lines = [f"duration {schedule.duration!r}"]
    lines += [f"pt {p.hex()}" for p in schedule.plaintexts]
    for t, name, on in schedule.events:
        lines.append(f"{'enable' if on else 'disable'} {name} {t!r}")
    return "\n".join(lines) + "\n"


def read_stimulus(path: str | Path) -> StimulusSchedule:
    return parse_stimulus(Path(path).read_text())


def mttd_clockwork(counter_bits: int = 21, clock: float = 33e6) -> float:
    """Period of a free-running ``counter_bits`` counter, in seconds."""
    return (1 << counter_bits) / clock


# ---------------------------------------------------------------------------
# waveforms

_PAD = 2e-6  # s of padding on each side of the band-limiting FFT


def _bandlimit(x: np.ndarray, sample_rate: float, bandwidth: float) -> np.ndarray:
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
    spec[f > bandwidth] = 0.0
    return np.fft.irfft(spec, n=x.size)


@lru_cache(maxsize=8)
def _lfsr_chips(seed: int, n_bits: int = 15) -> np.ndarray:
    """Maximal-length sequence from x^15 + x^14 + 1, mapped to +-1."""
    state = seed & ((1 << n_bits) - 1) or 1
    out = np.empty((1 << n_bits) - 1, dtype=np.int8)
    for i in range(out.size):
        bit = ((state >> 14) ^ (state >> 13)) & 1
        out[i] = 1 if state & 1 else -1
        state = ((state << 1) | bit) & ((1 << n_bits) - 1)
    out.setflags(write=False)
    return out


def _encryption_windows(t: np.ndarray, clock: float, p: ActivityParams):
    """Encryption index and cycle-within-encryption for each time sample."""
    cycles = np.floor(t * clock).astype(np.int64)
    n_enc = cycles // p.encryption_period_cycles
    phase = cycles - n_enc * p.encryption_period_cycles
    return n_enc, phase


def _aes_envelope(t, clock, schedule, p: ActivityParams) -> np.ndarray:
    n_enc, phase = _encryption_windows(t, clock, p)
    env = np.full(t.shape, p.idle_level)
    if not schedule.plaintexts:
        return env
    active = (phase < p.round_cycles) & (t >= 0) & (t < schedule.duration)
    rnd = np.minimum(phase // p.cycles_per_round, p.n_rounds - 1)
    amps = np.asarray(p.round_amplitudes, dtype=float)
    env = np.where(active, amps[rnd], env)
    return env


def _carrier(t, clock, p: ActivityParams) -> np.ndarray:
    c = np.zeros_like(t)
    k = 1
    while k * clock < p.max_harmonic_frequency:
        c += np.cos(2 * np.pi * k * clock * t) / k
        k += 2
    return c


def _sideband_carrier(t, clock, p: ActivityParams) -> np.ndarray:
    c = np.zeros_like(t)
    for order, sign in p.sidebands:
        f = order * clock + sign * p.f_mod
        if 0 < f < p.max_harmonic_frequency:
            c += np.cos(2 * np.pi * f * t) / order
    return c


def _trojan_envelope(kind: SourceKind, t, clock, schedule, p: ActivityParams) -> np.ndarray:
    if kind is SourceKind.T1:
        period = 1 << p.t1_counter_bits
        cyc = np.floor(t * clock).astype(np.int64) + p.t1_counter_start + 1
        gate = np.mod(cyc, period) < p.t1_active_fraction * period
        return gate * 0.5 * (1.0 + np.cos(2 * np.pi * p.t1_carrier * t))
    if kind is SourceKind.T2:
        n_enc, phase = _encryption_windows(t, clock, p)
        hit = schedule.trigger_mask(n_enc, p.t2_pattern)
        return ((phase < p.round_cycles) & hit & (t >= 0) & (t < schedule.duration)).astype(float)
    if kind is SourceKind.T3:
        chips = _lfsr_chips(p.t3_seed)
        idx = np.floor(t * p.t3_chip_rate).astype(np.int64)
        # the payload load is keyed on by +1 chips
        return 0.5 * (1.0 + chips[np.mod(idx, chips.size)])
    if kind is SourceKind.T4:
        return np.ones_like(t)
    raise ValueError(kind)


def current_waveform(
    source: ActivitySource,
    schedule: StimulusSchedule,
    timebase: Timebase,
    floorplan: Floorplan | None = None,
) -> np.ndarray:
    """Sampled switching current of one source, in amperes."""
    p = source.params
    if timebase.sample_rate < 2 * p.max_harmonic_frequency:
        raise TimebaseTooCoarse(
            f"sample rate {timebase.sample_rate:g} below {2 * p.max_harmonic_frequency:g} S/s"
        )
    if not source.enabled and source.kind is SourceKind.AES_CORE:
        return np.zeros(timebase.n_samples)
    floorplan = floorplan or default_floorplan()
    clock = floorplan.clock_frequency
    amp = floorplan.peak_current(source.block)

    n_pad = int(round(_PAD * timebase.sample_rate))
    t = timebase.t0 + np.arange(-n_pad, timebase.n_samples + n_pad) / timebase.sample_rate
    core = slice(n_pad, n_pad + timebase.n_samples)

    if source.kind is SourceKind.AES_CORE:
        env = _bandlimit(_aes_envelope(t, clock, schedule, p), timebase.sample_rate, p.activity_bandwidth)
        return amp * (env * _carrier(t, clock, p))[core]

    on = schedule.enabled_at(source.kind.value, t, source.enabled).astype(float)
    if not on.any():
        return np.zeros(timebase.n_samples)
    raw = _trojan_envelope(source.kind, t, clock, schedule, p) * on
    env = _bandlimit(raw, timebase.sample_rate, p.trojan_bandwidth)
    i = env * _sideband_carrier(t, clock, p)
    if source.kind is SourceKind.T1:
        gate = _bandlimit((raw > 0) * on, timebase.sample_rate, p.trojan_bandwidth)
        i = i + p.t1_baseband_fraction * gate * np.cos(2 * np.pi * p.t1_carrier * t)
    elif source.kind is SourceKind.T4:
        i = i + p.t4_dc_fraction * on
    return amp * i[core]


def sources_for(
    floorplan: Floorplan,
    enabled: set[str] | frozenset[str] = frozenset(),
    params: ActivityParams = ActivityParams(),
    aes_enabled: bool = True,
) -> list[ActivitySource]:
    """One source per floorplan block; Trojans listed in ``enabled`` are on."""
    out = []
    for b in floorplan.blocks:
        kind = SourceKind(b.name) if b.name in SourceKind.__members__ else None
        if kind is None:
            # extra Trojan-like blocks are named "<kind>:<tag>"
            kind = SourceKind(b.name.split(":", 1)[0])
        on = aes_enabled if kind is SourceKind.AES_CORE else (b.name in enabled or kind.value in enabled)
        out.append(ActivitySource(block=b.name, kind=kind, enabled=on, params=params))
    return out


def with_params(sources: list[ActivitySource], **changes) -> list[ActivitySource]:
    return [replace(s, params=replace(s.params, **changes)) for s in sources]
