"""``psasim`` command line: compile coils, scan sensors, enroll, detect, SNR.

Exit codes: 0 success, 1 I/O, 2 coil legality, 3 pipeline precondition,
4 config validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import __version__, dsp, lattice, plotting
from . import pipeline as pl
from .calibration import measured_snr
from .chipmodel import StimulusFileError
from .config import ConfigError, ExperimentConfig, load_config, scenario_trojans
from .emcouple import write_trace

EXIT_OK = 0
EXIT_IO = 1
EXIT_COIL = 2
EXIT_PIPELINE = 3
EXIT_CONFIG = 4

BASELINE_FILE = "baseline.json"
MANIFEST_FILE = "manifest.json"

log = logging.getLogger("psasim")


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def write(self, out_dir: Path) -> Path:
        """Write atomically: temp file, then rename over the target."""
        path = out_dir / MANIFEST_FILE
        tmp = out_dir / (MANIFEST_FILE + ".tmp")
        doc = {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "outputs": sorted(self.outputs),
            "wall_time": self.wall_time,
        }
        tmp.write_text(json.dumps(doc, indent=2) + "\n")
        os.replace(tmp, path)
        return path


class Run:
    """Output directory bookkeeping shared by the commands."""

    def __init__(self, out_dir: Path, config_hash: str):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(config_hash=config_hash)
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def finish(self) -> None:
        self.manifest.wall_time = round(time.perf_counter() - self.t0, 3)
        self.manifest.write(self.out)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PSA_SIM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Iterable) -> list:
    """Ordered map, parallel up to PSA_SIM_THREADS workers."""
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    return cfg.out if cfg.out is not None else Path("psa_out")


# ---------------------------------------------------------------------------
# commands


def cmd_compile(args) -> int:
    spec, bitmap, taps = lattice.read_coil_program(args.program)
    coil = lattice.compile_coil(bitmap, taps, spec)
    w = coil.winding_map
    summary = {
        "turns": coil.turns,
        "winding_min": int(w.min()),
        "winding_max": int(w.max()),
        "resistance_ohm": round(coil.resistance, 6),
        "n_switches": coil.n_switches,
        "n_segments": coil.n_segments,
    }
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    if args.out:
        run = Run(Path(args.out), "")
        run.path("coil.json").write_text(json.dumps(summary, indent=2) + "\n")
        plotting.plot_winding_map(coil, run.path("coil.png"))
        run.finish()
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load(args)
    scenarios = [(name, scenario_trojans(name)) for name in cfg.scan.scenarios]
    run = Run(_out_dir(args, cfg), cfg.hash())
    start, n = cfg.detect.start_index, cfg.scan.n_traces
    for name, trojans in scenarios:
        dev = cfg.device(trojans)
        log.info("scenario %s: %d sensors x %d traces", name, len(cfg.scan.sensors), n)

        def one(s):
            traces = [dev.acquire_sensor(s, start + k) for k in range(n)]
            return s, traces[0], dsp.spectrum(traces)

        spectra = {}
        for s, first, spec in _map(one, cfg.scan.sensors):
            write_trace(first, run.path(f"s{s}_{name}.trc"))
            dsp.write_spectrum_csv(spec, run.path(f"s{s}_{name}.csv"))
            spectra[s] = spec
        plotting.plot_spectrum_grid(spectra, run.path(f"spectra_{name}.png"), title=f"scenario {name}")
    run.finish()
    print(f"scan: {len(scenarios)} scenarios x {len(cfg.scan.sensors)} sensors -> {run.out}")
    return EXIT_OK


def _enroll(cfg: ExperimentConfig) -> pl.BaselineStore:
    return pl.enroll(cfg.device(), cfg.scan.sensors, cfg.detect.n_average)


def cmd_enroll(args) -> int:
    cfg = _load(args)
    run = Run(_out_dir(args, cfg), cfg.hash())
    store = _enroll(cfg)
    store.save(run.path(BASELINE_FILE))
    plotting.plot_spectrum_grid(store.spectra, run.path("baseline.png"), title="enrolled baseline")
    run.finish()
    print(f"enrolled {len(store.sensors)} sensors -> {run.out / BASELINE_FILE}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load(args)
    run = Run(_out_dir(args, cfg), cfg.hash())
    base_path = Path(args.baseline) if args.baseline else run.out / BASELINE_FILE
    if base_path.is_dir():
        base_path = base_path / BASELINE_FILE
    if base_path.exists():
        store = pl.BaselineStore.load(base_path)
        if store.seed != cfg.seed or store.schedule_id != cfg.schedule_id():
            raise pl.NotEnrolled(f"{base_path} was enrolled under a different seed or schedule")
        if base_path.parent == run.out:
            run.manifest.outputs.append(base_path.name)
    else:
        log.info("no baseline at %s, enrolling", base_path)
        store = _enroll(cfg)
        store.save(base_path)
        if base_path.parent == run.out:
            run.manifest.outputs.append(base_path.name)
    device = cfg.device()
    report = pl.run_pipeline(store, device, cfg.detect)
    report.write_json(run.path("report.json"))
    report.write_heat_map_csv(run.path("heat_map.csv"))
    plotting.plot_heat_map(
        report.heat_map, run.path("heat_map.png"), cfg.detect.threshold_db, report.refined_region, cfg.lattice
    )
    sensor = report.located_sensor if report.detected else max(report.heat_map, key=report.heat_map.get)
    live = dsp.spectrum(
        [device.acquire_sensor(sensor, cfg.detect.start_index + k) for k in range(cfg.detect.n_average)]
    )
    plotting.plot_spectra(
        {"baseline": store[sensor], "live": live}, run.path("spectrum.png"), title=f"sensor {sensor}"
    )
    run.finish()
    if report.detected:
        print(
            f"verdict=trojan_detected sensor={report.located_sensor} region={list(report.refined_region)} "
            f"class={report.trojan_class} traces={report.traces_used} mttd={report.mttd:.6f}s"
        )
    else:
        print(f"verdict=clean traces={report.traces_used}")
    return EXIT_OK


def cmd_snr(args) -> int:
    cfg = _load(args)
    run = Run(_out_dir(args, cfg), cfg.hash())
    dev = cfg.device()
    sensors = list(cfg.scan.sensors)
    n = cfg.scan.n_traces
    parts = _map(lambda s: measured_snr(dev, [s], n, probe=False), sensors)
    table = {}
    for part in parts:
        table.update(part)
    table.update(measured_snr(dev, [], n, probe=True))
    labels = {k: (f"sensor {k}" if k != "probe" else "probe") for k in table}
    lines = ["source,snr_db"]
    for k, v in table.items():
        print(f"{labels[k]:>10s}  {v:7.2f} dB")
        lines.append(f"{k},{v:.6f}")
    run.path("snr.csv").write_text("\n".join(lines) + "\n")
    plotting.plot_snr({labels[k]: v for k, v in table.items()}, run.path("snr.png"))
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psasim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"psasim {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--seed", type=int, help="override the config seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="check a coil program and summarise it")
    c.add_argument("program")
    c.set_defaults(func=cmd_compile)
    s = sub.add_parser("scan", parents=[common], help="record traces and spectra per scenario")
    s.set_defaults(func=cmd_scan)
    e = sub.add_parser("enroll", parents=[common], help="record the dormant baseline")
    e.set_defaults(func=cmd_enroll)
    d = sub.add_parser("detect", parents=[common], help="scan, localize and classify")
    d.add_argument("--baseline", help="baseline file or directory (default: <out>/baseline.json)")
    d.set_defaults(func=cmd_detect)
    n = sub.add_parser("snr", parents=[common], help="SNR of every sensor and the external probe")
    n.set_defaults(func=cmd_snr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, StimulusFileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except lattice.LatticeError as exc:
        print(f"illegal coil: {exc}", file=sys.stderr)
        return EXIT_COIL
    except (pl.NotEnrolled, pl.NotDetected, pl.BaselineFileError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (OSError, lattice.CoilFileError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
