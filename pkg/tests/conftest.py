import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wafergp.synth import generate_wafer, preset
from wafergp.wafer import build_tiling

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cfg():
    return preset("small")


@pytest.fixture(scope="session")
def small_tiling(small_cfg):
    return build_tiling(small_cfg.geometry, small_cfg.layout)


@pytest.fixture(scope="session")
def small_lot6(small_cfg):
    return generate_wafer(small_cfg, 6, 1)


@pytest.fixture(scope="session")
def small_lot1(small_cfg):
    return generate_wafer(small_cfg, 1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
