import numpy as np
import pytest

from psasim import chipmodel as cm

FS = 960e6
N = 16384


def spectrum_db(x, fs=FS):
    w = np.hanning(x.size)
    p = np.abs(np.fft.rfft(x * w)) ** 2
    f = np.fft.rfftfreq(x.size, 1 / fs)
    return f, 10 * np.log10(p + 1e-300)


def level(f, p, freq, half=3):
    k = int(round(freq / (f[1] - f[0])))
    return p[k - half : k + half + 1].max()


def source_current(name, enabled=True, schedule=None, t0=0.0):
    fp = cm.default_floorplan()
    src = [s for s in cm.sources_for(fp, {name} if enabled else set()) if s.block == name][0]
    tb = cm.Timebase(t0=t0, sample_rate=FS, n_samples=N)
    return cm.current_waveform(src, schedule or cm.default_schedule(), tb, fp)


def test_gate_ratios():
    fp = cm.default_floorplan()
    assert fp.block("T3").relative_amplitude == pytest.approx(329 / 28806)
    assert fp.block("T3").relative_amplitude == pytest.approx(0.0114, abs=5e-5)
    assert fp.peak_current("T4") == pytest.approx(2181e-6)


def test_trojans_sit_in_sensor_10_only():
    fp = cm.default_floorplan()
    for name in ("T1", "T2", "T3", "T4"):
        r0, r1, c0, c1 = fp.block(name).rect
        assert 19 <= r0 and r1 <= 24 and 19 <= c0 and c1 <= 24


def test_aes_has_clock_harmonics_and_no_sidebands():
    f, p = spectrum_db(source_current("AES_CORE"))
    ref = level(f, p, 33e6)
    assert level(f, p, 99e6) > ref - 20
    for side in (48e6, 84e6, 18e6, 114e6):
        assert level(f, p, side) < ref - 100


@pytest.mark.parametrize("name", ["T1", "T2", "T3", "T4"])
def test_trojan_sidebands(name):
    f, p = spectrum_db(source_current(name))
    hi48, hi84 = level(f, p, 48e6), level(f, p, 84e6)
    assert hi48 > hi84 > level(f, p, 60e6) + 20
    # the 84 MHz line has a third of the 48 MHz amplitude
    assert hi48 - hi84 == pytest.approx(20 * np.log10(3), abs=3)


def test_disabled_trojan_is_silent():
    assert not source_current("T4", enabled=False).any()


def test_t1_envelope_period():
    fp = cm.default_floorplan()
    t = np.arange(0, 8e-6, 1 / FS)
    env = cm._trojan_envelope(cm.SourceKind.T1, t, fp.clock_frequency, cm.default_schedule(), cm.ActivityParams())
    spec = np.abs(np.fft.rfft(env - env.mean()))
    f = np.fft.rfftfreq(t.size, 1 / FS)
    assert f[np.argmax(spec)] == pytest.approx(750e3, rel=0.1)


def test_t2_fires_only_on_matching_plaintexts():
    sched = cm.default_schedule()
    hits = [p.startswith(b"\xaa\xaa") for p in sched.plaintexts]
    assert hits == [k % 3 == 0 for k in range(12)]
    quiet = cm.StimulusSchedule(plaintexts=tuple(b"\x00" * 16 for _ in range(4)))
    assert not np.any(np.abs(source_current("T2", schedule=quiet)) > 1e-12)


def test_t3_chips_are_maximal_length():
    chips = cm._lfsr_chips(0x4A5B)
    assert chips.size == 2**15 - 1
    assert chips.sum() == 1  # one more +1 than -1 in an m-sequence
    assert set(np.unique(chips)) == {-1, 1}


def test_timebase_too_coarse():
    src = cm.sources_for(cm.default_floorplan())[0]
    with pytest.raises(cm.TimebaseTooCoarse):
        cm.current_waveform(src, cm.default_schedule(), cm.Timebase(0.0, 200e6, 100))


def test_schedule_events_switch_trojans():
    sched = cm.parse_stimulus("pt " + "00" * 16 + "\nenable T4 1e-6\ndisable T4 3e-6\n")
    t = np.array([0.0, 2e-6, 4e-6])
    assert sched.enabled_at("T4", t, False).tolist() == [False, True, False]


def test_stimulus_roundtrip():
    sched = cm.default_schedule()
    assert cm.parse_stimulus(cm.format_stimulus(sched)) == sched


@pytest.mark.parametrize(
    "text", ["pt 00\n", "enable T9 0\n", "frobnicate\n", "duration abc\n"]
)
def test_stimulus_errors(text):
    with pytest.raises(cm.StimulusFileError):
        cm.parse_stimulus(text)


def test_block_outside_die():
    with pytest.raises(ValueError):
        cm.Floorplan(blocks=(cm.Block("T1", (30, 40, 0, 2), 0.1),))


def test_clockwork_counter_period():
    assert cm.mttd_clockwork(21, 33e6) == pytest.approx(63.55e-3, rel=1e-3)


def test_idle_schedule_is_quiet():
    i = source_current("AES_CORE", schedule=cm.idle_schedule())
    assert not i.any()
