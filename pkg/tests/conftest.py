import numpy as np
import pytest

from phasecorr.core.performance import TableCache
from phasecorr.filterkernel import build_filter_table, build_pattern_table
from phasecorr.gaussian_sim import PhaseNoiseModel, SqueezingSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow statistical tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def filter_table(tmp_path_factory):
    """Default-resolution filter table, cached in a per-session directory."""
    return build_filter_table(cache=TableCache(tmp_path_factory.mktemp("cache")))


@pytest.fixture(scope="session")
def pattern_table(filter_table):
    """f-bar table at the canonical width w = 1.3."""
    return build_pattern_table(1.3, filter=filter_table)


@pytest.fixture
def canonical_spec():
    return SqueezingSpec.from_db(7.4, eta=0.6)


@pytest.fixture
def uniform_noise():
    return PhaseNoiseModel(kind="uniform")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
