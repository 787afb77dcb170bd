import numpy as np
import pytest

from cellfdi.params import default_config
from cellfdi.placement import Partition, build_E

ZONE_1 = list(range(1, 13))
ZONE_2 = list(range(13, 25))


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def model(config):
    return config.build()


@pytest.fixture(scope="session")
def two_sensor_model(model):
    p = Partition.from_zones([ZONE_1, ZONE_2], [7, 19], 24)
    return model.with_sensors([7, 19], build_E(model.Mo, p))


@pytest.fixture(scope="session")
def single_sensor_model(model):
    return model.with_sensors([14], np.ones((24, 1)))


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
