from pathlib import Path

import pytest

from psasim.device import Device
from psasim import pipeline as pl

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def device():
    return Device(seed=11)


@pytest.fixture(scope="session")
def store(device):
    return pl.enroll(device, range(16))
