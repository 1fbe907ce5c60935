import pytest

from psasim.config import ConfigError, ExperimentConfig, load_config, parse_config, scenario_trojans


def test_defaults_and_overrides():
    cfg = parse_config(
        "seed = 7\n"
        "trojans = T2, T4\n"
        "chain.noise_floor = 1e-5  # louder\n"
        "detect.budget = 8\n"
        "floorplan.T3 = 22 24 19 21 0.02\n"
        "scan.sensors = 0-2, 10\n"
        "scan.scenarios = none T1+T3\n"
        "signature.T4 = flatness 0 0.1\n"
    )
    assert cfg.seed == 7
    assert cfg.trojans == {"T2", "T4"}
    assert cfg.chain.noise_floor == 1e-5
    assert cfg.detect.budget == 8
    assert cfg.floorplan.block("T3").relative_amplitude == 0.02
    assert cfg.scan.sensors == (0, 1, 2, 10)
    assert cfg.scan.scenarios == ("none", "T1+T3")
    t4 = [s for s in cfg.detect.signatures if s.name == "T4"][0]
    assert t4.bounds == (("flatness", 0.0, 0.1),)
    assert [s.name for s in cfg.detect.signatures] == ["T1", "T2", "T3", "T4"]


@pytest.mark.parametrize(
    "text",
    [
        "bogus = 1",
        "chain.nope = 1",
        "seed = abc",
        "seed = -1",
        "trojans = T7",
        "scan.scenarios = none T9",
        "floorplan.T1 = 1 2 3",
        "floorplan.XX = 1 2 3 4",
        "floorplan.T1 = 30 40 0 2",
        "chain.sample_rate = 1e6",
        "signature.T4 = wobble 0 1",
        "seed = 1\nseed = 2",
        "no equals sign",
        "schedule = /does/not/exist.stim",
    ],
)
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_hash_is_stable_and_sensitive():
    a = parse_config("seed = 1\n# comment\n")
    b = parse_config("seed=1")
    c = parse_config("seed = 2")
    assert a.hash() == b.hash() == ExperimentConfig(seed=1).hash()
    assert a.hash() != c.hash()
    assert len(a.hash()) == 64


def test_schedule_path_relative_to_config(tmp_path):
    (tmp_path / "s.stim").write_text("pt " + "aa" * 16 + "\n")
    (tmp_path / "c.cfg").write_text("schedule = s.stim\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.schedule().plaintexts == (b"\xaa" * 16,)
    assert cfg.schedule_id() != "default"


def test_scenario_names():
    assert scenario_trojans("none") == frozenset()
    assert scenario_trojans("T1+T3") == {"T1", "T3"}
    with pytest.raises(ConfigError):
        scenario_trojans("T5")
