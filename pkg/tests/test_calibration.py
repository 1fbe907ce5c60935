import pytest

from psasim import calibration as cal
from psasim.device import Device
from psasim.emcouple import AcquisitionChain, CouplingModel


def test_stored_noise_floor_matches_calibration():
    assert cal.calibrate_noise_floor(Device()) == pytest.approx(AcquisitionChain().noise_floor, rel=1e-3)


def test_stored_probe_scale_matches_calibration():
    assert cal.calibrate_probe_scale(Device()) == pytest.approx(CouplingModel().probe_scale, rel=1e-3)


def test_probe_scale_is_attenuation():
    assert CouplingModel().probe_scale < 1.0


def test_measured_snr_hits_anchors():
    snr = cal.measured_snr(Device(seed=2), sensors=[10])
    assert snr[10] == pytest.approx(41.0, abs=0.5)
    assert snr["probe"] == pytest.approx(14.3, abs=0.5)


def test_tenfold_noise_costs_20_db_on_strong_sensors():
    dev = Device(seed=4)
    loud = dev.with_chain(noise_floor=10 * dev.chain.noise_floor)
    a = cal.measured_snr(dev, sensors=range(16), probe=False)
    b = cal.measured_snr(loud, sensors=range(16), probe=False)
    strong = [s for s in a if a[s] >= 30]
    assert strong == [10]
    for s in strong:
        assert a[s] - b[s] == pytest.approx(20.0, abs=0.5)
    # weak sensors cannot lose 20 dB: their SNR is already near 0 dB
    assert all(a[s] - b[s] < 20.0 for s in a if a[s] < 10)


def test_silent_chip_gives_zero_snr():
    dev = cal.idle_device(Device(seed=1))
    snr = cal.measured_snr(dev, sensors=[10])
    assert snr[10] == pytest.approx(0.0, abs=0.3)
    assert snr["probe"] == pytest.approx(0.0, abs=0.3)
