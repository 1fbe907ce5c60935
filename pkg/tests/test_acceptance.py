"""Acceptance criteria, each at its stated tolerance over ten seeds.

Every test prints one ``ACCEPTANCE [n] ... PASS|FAIL`` line, visible even
under pytest's output capture.
"""

import json

import numpy as np
import pytest

from psasim import emcouple as em
from psasim import lattice as L
from psasim import pipeline as pl
from psasim.calibration import measured_snr
from psasim.cli import main
from psasim.device import Device

from test_lattice import angle_winding, random_coils, spiral

SEEDS = range(10)
HTS = ("T1", "T2", "T3", "T4")
TOL = 2 * 120e6 / 2048  # two bins of 58.59 kHz


@pytest.fixture
def report_line(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE [{n}] {title}: {'PASS' if ok else 'FAIL'} ({detail})")

    return emit


def _runs(noise_scale):
    out = {}
    for seed in SEEDS:
        base = Device(seed=seed)
        base = base.with_chain(noise_floor=base.chain.noise_floor * noise_scale)
        store = pl.enroll(base, range(16))
        for ht in HTS:
            out[seed, ht] = pl.run_pipeline(store, base.with_trojans({ht}))
    return out


@pytest.fixture(scope="module")
def runs():
    return _runs(1.0)


@pytest.fixture(scope="module")
def noisy_runs():
    return _runs(3.0)


def test_1_snr_ordering(report_line):
    psa, probe = [], []
    for seed in SEEDS:
        snr = measured_snr(Device(seed=seed), sensors=[10])
        psa.append(snr[10])
        probe.append(snr["probe"])
    psa, probe = np.array(psa), np.array(probe)
    ok = bool(np.all(np.abs(psa - 41.0) <= 2) and np.all(np.abs(probe - 14.3) <= 3) and np.all(psa - probe >= 20))
    report_line(
        1,
        "SNR ordering",
        ok,
        f"PSA {psa.min():.2f}..{psa.max():.2f} dB, probe {probe.min():.2f}..{probe.max():.2f} dB, "
        f"min gap {np.min(psa - probe):.2f} dB",
    )
    assert ok


def test_2_sideband_reproduction(runs, report_line):
    bad = []
    for (seed, ht), r in runs.items():
        ps10 = r.peaks[10]
        if not (ps10.near(48e6, TOL) and ps10.near(84e6, TOL)) or r.peaks[0]:
            bad.append((seed, ht))
    ok = not bad
    report_line(2, "48/84 MHz sidebands on sensor 10, none on sensor 0", ok, f"{40 - len(bad)}/40 runs, failing {bad}")
    assert ok


def test_3_trace_budget_and_mttd(runs, report_line):
    used = [r.traces_used for r in runs.values()]
    times = [r.mttd for r in runs.values()]
    ok = all(r.detected for r in runs.values()) and max(used) <= 10 and max(times) < 0.01
    report_line(3, "trace budget and MTTD", ok, f"max traces {max(used)}, max mttd {max(times) * 1e3:.3f} ms")
    assert ok


def test_4_small_trojan_detection(runs, report_line):
    hits = sum(runs[seed, "T3"].detected for seed in SEEDS)
    report_line(4, "T3 (329 cells) detection", hits == 10, f"{hits}/10 seeds")
    assert hits == 10


def test_5_localization(runs, report_line):
    fp = Device().floorplan
    quarter = L.rect_area(L.preset_region(10)) / 4
    bad = []
    for (seed, ht), r in runs.items():
        rect = r.refined_region
        cr, cc = fp.block(ht).centroid
        inside = rect[0] <= cr <= rect[1] and rect[2] <= cc <= rect[3]
        if r.located_sensor != 10 or not inside or L.rect_area(rect) > quarter:
            bad.append((seed, ht, r.located_sensor, rect))
    ok = not bad
    report_line(5, "localization to sensor 10 and a quarter-size rectangle", ok, f"{40 - len(bad)}/40 runs {bad}")
    assert ok


def test_6_classification(runs, noisy_runs, report_line):
    def fully_correct(rs):
        return sum(all(rs[seed, ht].trojan_class == ht for ht in HTS) for seed in SEEDS)

    clean, noisy = fully_correct(runs), fully_correct(noisy_runs)
    ok = clean == 10 and noisy >= 8
    report_line(6, "classification", ok, f"default SNR {clean}/10 runs fully correct, noise x3 {noisy}/10")
    assert ok


def test_7_self_cancellation(report_line):
    spec, model, fs = L.LatticeSpec(), em.CouplingModel(), 960e6
    i = 1e-3 * np.cos(2 * np.pi * 48e6 * np.arange(4096) / fs)
    die = L.compile_coil(*L.rectangle_coil((0, 35, 0, 35)), spec)
    small = L.compile_coil(*L.rectangle_coil((16, 19, 16, 19)), spec)
    a, b = (17.5, 17.5), (17.5, 18.5)
    pair = em.induced_voltage(die, [(a, i), (b, -i)], model, fs)
    single = em.induced_voltage(small, [(a, i)], model, fs)
    ratio = np.sqrt(np.mean(pair**2)) / np.sqrt(np.mean(single**2))
    report_line(7, "self-cancellation", ratio < 0.01, f"whole-die / small-coil RMS = {ratio:.2e}")
    assert ratio < 0.01


def test_8_winding_oracle(report_line):
    coils = random_coils(100)
    matches = sum(np.array_equal(c.winding_map, angle_winding(c.path, (35, 35))) for c in coils)
    turns = L.compile_coil(*spiral(), L.LatticeSpec()).turns
    ok = matches == 100 and turns == 2
    report_line(8, "winding map vs angle-summation oracle", ok, f"{matches}/100 exact, spiral turns={turns}")
    assert ok


def test_9_impedance_envelopes(report_line):
    worst_v = worst_t = 0.0
    for k in range(16):
        c = L.preset_coil(k)
        zv = [em.coil_impedance(c, v, 25.0) for v in np.linspace(0.8, 1.2, 41)]
        zt = [em.coil_impedance(c, 1.0, t) for t in np.linspace(-40, 125, 34)]
        worst_v = max(worst_v, 20 * np.log10(max(zv) / min(zv)))
        worst_t = max(worst_t, 20 * np.log10(max(zt) / min(zt)))
    ok = worst_v <= 4 and worst_t <= 4
    report_line(9, "impedance envelopes", ok, f"Vdd {worst_v:.2f} dB, temperature {worst_t:.2f} dB")
    assert ok


def test_10_determinism(tmp_path, report_line, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 42\ntrojans = T3\n")
    reports = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["detect", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        reports.append((out / "report.json").read_bytes())
    capsys.readouterr()
    same = reports[0] == reports[1]
    cls = json.loads(reports[0])["trojan_class"]
    report_line(10, "determinism of detect", same, f"byte-identical={same}, class={cls}")
    assert same
