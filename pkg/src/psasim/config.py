"""Experiment configuration: a line-oriented ``key = value`` file.

Keys are dotted, ``section.field``; ``#`` starts a comment. Unknown keys
and malformed values are rejected with the offending line number::

    seed = 7
    trojans = T2
    chain.noise_floor = 5e-6
    floorplan.T3 = 22 24 19 21
    scan.scenarios = none, T1, T2, T3, T4
    signature.T4 = flatness 0 0.05

A ``signature.<class>`` line replaces that class's feature bounds
(``feature low high`` triples separated by ``;``) or appends a new class.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import chipmodel as cm
from . import emcouple as em
from .device import Device
from .lattice import LatticeSpec
from .pipeline import ClassSignature, EnvelopeFeatures, PipelineSettings

SCENARIO_NONE = "none"


class ConfigError(ValueError):
    pass


def _parse_int(text: str) -> int:
    return int(text, 0)


def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.replace(",", " ").split() if x.strip())


def _parse_sensors(text: str) -> tuple[int, ...]:
    if text.strip() == "all":
        return tuple(range(16))
    out = []
    for tok in _parse_list(text):
        if "-" in tok:
            a, b = tok.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return tuple(sorted(set(out)))


def _parse_trojans(text: str) -> frozenset[str]:
    names = _parse_list(text)
    if names in ((), (SCENARIO_NONE,)):
        return frozenset()
    valid = {k.value for k in cm.TROJANS}
    bad = [n for n in names if n not in valid]
    if bad:
        raise ValueError(f"unknown Trojan {bad[0]!r}")
    return frozenset(names)


def _parse_signature(name: str, text: str) -> ClassSignature:
    known = {f.name for f in fields(EnvelopeFeatures)}
    bounds = []
    for part in text.split(";"):
        tok = part.split()
        if len(tok) != 3:
            raise ValueError("expected 'feature low high'")
        if tok[0] not in known:
            raise ValueError(f"unknown feature {tok[0]!r}")
        bounds.append((tok[0], float(tok[1]), float(tok[2])))
    return ClassSignature(name, tuple(bounds))


def _scenario_trojans(name: str) -> frozenset[str]:
    """``none``, ``T2`` or a ``+``-joined combination such as ``T1+T3``."""
    return _parse_trojans(name.replace("+", " "))


_SECTION_TYPES = {
    "lattice": LatticeSpec,
    "coupling": em.CouplingModel,
    "chain": em.AcquisitionChain,
    "params": cm.ActivityParams,
    "detect": PipelineSettings,
}


def _coerce(default, text: str):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return _parse_int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, bytes):
        return bytes.fromhex(text)
    raise ValueError("field cannot be set from a config file")


@dataclass(frozen=True)
class ScanSettings:
    scenarios: tuple[str, ...] = (SCENARIO_NONE, "T1", "T2", "T3", "T4")
    sensors: tuple[int, ...] = tuple(range(16))
    n_traces: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    trojans: frozenset[str] = frozenset()
    schedule_path: Path | None = None
    out: Path | None = None
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    floorplan: cm.Floorplan = field(default_factory=cm.default_floorplan)
    coupling: em.CouplingModel = field(default_factory=em.CouplingModel)
    chain: em.AcquisitionChain = field(default_factory=em.AcquisitionChain)
    params: cm.ActivityParams = field(default_factory=cm.ActivityParams)
    detect: PipelineSettings = field(default_factory=PipelineSettings)
    scan: ScanSettings = field(default_factory=ScanSettings)
    source_text: str = ""

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.schedule_path is not None and not Path(self.schedule_path).is_file():
            raise ConfigError(f"schedule file not found: {self.schedule_path}")

    def schedule(self) -> cm.StimulusSchedule:
        if self.schedule_path is None:
            return cm.default_schedule()
        return cm.read_stimulus(self.schedule_path)

    def schedule_id(self) -> str:
        if self.schedule_path is None:
            return "default"
        return hashlib.sha256(Path(self.schedule_path).read_bytes()).hexdigest()[:16]

    def device(self, trojans=None) -> Device:
        return Device(
            spec=self.lattice,
            floorplan=self.floorplan,
            coupling=self.coupling,
            chain=self.chain,
            schedule=self.schedule(),
            params=self.params,
            enabled=self.trojans if trojans is None else frozenset(trojans),
            seed=self.seed,
            schedule_id=self.schedule_id(),
        )

    def canonical(self) -> str:
        """Every resolved setting, one ``key = repr`` per line, sorted."""
        lines = [
            f"seed = {self.seed}",
            f"trojans = {sorted(self.trojans)!r}",
            f"schedule_id = {self.schedule_id()}",
        ]
        for name in _SECTION_TYPES:
            obj = getattr(self, name)
            for f in fields(obj):
                lines.append(f"{name}.{f.name} = {getattr(obj, f.name)!r}")
        for b in self.floorplan.blocks:
            lines.append(f"floorplan.{b.name} = {b.rect!r} {b.relative_amplitude!r}")
        lines.append(f"floorplan.clock_frequency = {self.floorplan.clock_frequency!r}")
        for f in fields(self.scan):
            lines.append(f"scan.{f.name} = {getattr(self.scan, f.name)!r}")
        return "\n".join(sorted(lines)) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    top: dict = {}
    sections: dict[str, dict] = {k: {} for k in _SECTION_TYPES}
    blocks: dict[str, tuple] = {}
    scan: dict = {}
    signatures: dict[str, ClassSignature] = {}
    clock = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        seen.add(key)
        try:
            if key == "seed":
                top["seed"] = _parse_int(value)
            elif key == "trojans":
                top["trojans"] = _parse_trojans(value)
            elif key == "schedule":
                p = Path(value)
                top["schedule_path"] = p if p.is_absolute() or base_dir is None else base_dir / p
            elif key == "out":
                top["out"] = Path(value)
            elif key.startswith("floorplan."):
                name = key.split(".", 1)[1]
                if name == "clock_frequency":
                    clock = float(value)
                else:
                    nums = value.split()
                    if len(nums) not in (4, 5):
                        raise ValueError("expected 'r0 r1 c0 c1 [relative_amplitude]'")
                    blocks[name] = (tuple(int(x) for x in nums[:4]), float(nums[4]) if len(nums) == 5 else None)
            elif key.startswith("signature."):
                name = key.split(".", 1)[1]
                signatures[name] = _parse_signature(name, value)
            elif key.startswith("scan."):
                name = key.split(".", 1)[1]
                if name == "scenarios":
                    names = _parse_list(value)
                    for n in names:
                        _scenario_trojans(n)
                    scan["scenarios"] = names
                elif name == "sensors":
                    scan["sensors"] = _parse_sensors(value)
                elif name == "n_traces":
                    scan["n_traces"] = _parse_int(value)
                else:
                    raise KeyError(key)
            elif "." in key and key.split(".", 1)[0] in _SECTION_TYPES:
                section, name = key.split(".", 1)
                defaults = {f.name: f for f in fields(_SECTION_TYPES[section])}
                if name not in defaults:
                    raise KeyError(key)
                default = getattr(_SECTION_TYPES[section](), name)
                sections[section][name] = _coerce(default, value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key '{key}'") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from None

    try:
        if signatures:
            sigs = [signatures.pop(s.name, s) for s in PipelineSettings().signatures]
            sections["detect"]["signatures"] = tuple(sigs) + tuple(signatures.values())
        built = {name: _SECTION_TYPES[name](**vals) for name, vals in sections.items()}
        fp = cm.default_floorplan()
        if blocks or clock is not None:
            known = {b.name: b for b in fp.blocks}
            for name in blocks:
                if name not in known:
                    raise ConfigError(f"unknown floorplan block '{name}'")
            new_blocks = []
            for b in fp.blocks:
                if b.name in blocks:
                    rect, amp = blocks[b.name]
                    b = replace(b, rect=rect, relative_amplitude=b.relative_amplitude if amp is None else amp)
                new_blocks.append(b)
            fp = replace(fp, blocks=tuple(new_blocks), clock_frequency=clock or fp.clock_frequency)
        if scan.get("n_traces", 1) < 1:
            raise ConfigError("scan.n_traces must be positive")
        for s in scan.get("sensors", ()):
            if not 0 <= s < 16:
                raise ConfigError(f"sensor index {s} out of range")
        return ExperimentConfig(
            floorplan=fp,
            scan=ScanSettings(**scan),
            source_text=text,
            **built,
            **top,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def scenario_trojans(name: str) -> frozenset[str]:
    try:
        return _scenario_trojans(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
