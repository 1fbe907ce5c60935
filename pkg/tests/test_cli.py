import json

import pytest

from psasim.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_compile_spiral(capsys, data_dir, tmp_path):
    code, out, _ = run(capsys, "compile", str(data_dir / "spiral.coil"), "--out", str(tmp_path))
    assert code == 0
    assert "turns=2" in out
    assert (tmp_path / "coil.png").read_bytes()[:4] == b"\x89PNG"
    assert sorted(json.loads((tmp_path / "manifest.json").read_text())["outputs"]) == ["coil.json", "coil.png"]


def test_compile_broken(capsys, data_dir):
    code, _, err = run(capsys, "compile", str(data_dir / "broken.coil"))
    assert code == 2
    assert "node (" in err


def test_compile_missing(capsys, tmp_path):
    assert run(capsys, "compile", str(tmp_path / "none.coil"))[0] == 1


def test_config_error_exit(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("trojans = T9\n")
    assert run(capsys, "snr", "--config", str(cfg), "--out", str(tmp_path))[0] == 4


def test_missing_config_is_io_error(capsys, tmp_path):
    assert run(capsys, "snr", "--config", str(tmp_path / "nope.cfg"))[0] == 1


def test_scan_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", "--seed", "2", "--out", str(tmp_path))
    assert code == 0
    csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert len(csvs) == 80
    assert "s10_T4.csv" in csvs and "s0_none.csv" in csvs
    assert len(list(tmp_path.glob("*.trc"))) == 80
    assert len(list(tmp_path.glob("spectra_*.png"))) == 5
    listed = set(json.loads((tmp_path / "manifest.json").read_text())["outputs"])
    on_disk = {p.name for p in tmp_path.iterdir()} - {"manifest.json"}
    assert listed == on_disk


def test_scan_rerun_is_byte_identical(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 9\nscan.sensors = 0, 10\nscan.scenarios = none, T3\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "scan", "--config", str(cfg), "--out", str(a))[0] == 0
    assert run(capsys, "scan", "--config", str(cfg), "--out", str(b))[0] == 0
    names = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "manifest.json")
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_scan_unknown_scenario(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scan.scenarios = none, T8\n")
    assert run(capsys, "scan", "--config", str(cfg), "--out", str(tmp_path))[0] == 4


def test_detect_t2(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 5\ntrojans = T2\n")
    code, out, _ = run(capsys, "detect", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0
    doc = json.loads((tmp_path / "o" / "report.json").read_text())
    assert doc["trojan_class"] == "T2"
    assert doc["mttd"] < 0.01
    for name in ("heat_map.csv", "heat_map.png", "spectrum.png", "baseline.json", "manifest.json"):
        assert (tmp_path / "o" / name).exists()


def test_detect_clean(capsys, tmp_path):
    code, out, _ = run(capsys, "detect", "--seed", "5", "--out", str(tmp_path))
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text())["verdict"] == "clean"


def test_detect_corrupt_baseline(capsys, tmp_path):
    (tmp_path / "baseline.json").write_text("{ not json")
    assert run(capsys, "detect", "--out", str(tmp_path))[0] == 3


def test_detect_baseline_from_other_seed(capsys, tmp_path):
    assert run(capsys, "enroll", "--seed", "1", "--out", str(tmp_path))[0] == 0
    assert run(capsys, "detect", "--seed", "2", "--out", str(tmp_path))[0] == 3


def test_enroll_then_detect_reuses_baseline(capsys, tmp_path):
    assert run(capsys, "enroll", "--seed", "3", "--out", str(tmp_path / "base"))[0] == 0
    code, _, _ = run(
        capsys, "detect", "--seed", "3", "--baseline", str(tmp_path / "base"), "--out", str(tmp_path / "o")
    )
    assert code == 0
    assert not (tmp_path / "o" / "baseline.json").exists()


def test_snr_table(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("PSA_SIM_THREADS", "3")
    code, out, _ = run(capsys, "snr", "--seed", "1", "--out", str(tmp_path))
    assert code == 0
    rows = dict(line.split(",") for line in (tmp_path / "snr.csv").read_text().splitlines()[1:])
    assert 39 <= float(rows["10"]) <= 43
    assert 12 <= float(rows["probe"]) <= 17
    assert "probe" in out


def test_snr_tenfold_noise(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("chain.noise_floor = 4.8633e-5\nscan.sensors = 10\n")
    run(capsys, "snr", "--seed", "1", "--out", str(tmp_path / "a"))
    run(capsys, "snr", "--seed", "1", "--config", str(cfg), "--out", str(tmp_path / "b"))

    def read(d):
        return dict(line.split(",") for line in (d / "snr.csv").read_text().splitlines()[1:])

    a, b = read(tmp_path / "a"), read(tmp_path / "b")
    assert float(a["10"]) - float(b["10"]) == pytest.approx(20.0, abs=0.5)


def test_bad_seed(capsys, tmp_path):
    assert run(capsys, "snr", "--seed", "-3", "--out", str(tmp_path))[0] == 4
