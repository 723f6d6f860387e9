import numpy as np
import pytest

from dualshot_app import db
from dualshot_app.services.network import NetConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_net_config():
    """Smallest network the 160px anchor layout accepts."""
    return NetConfig(input_size=160, backbone_channels=(4, 6, 6, 6, 6, 6), fem_channels=3, seed=7)


@pytest.fixture(autouse=True)
def _fresh_registry():
    yield
    db.dispose_engines()
