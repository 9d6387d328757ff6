import numpy as np
import pytest

from tsepcal.device import DeviceParams
from tsepcal.dpt import NoiseSpec
from tsepcal import pipeline as pl
from tsepcal.regress import TrainConfig


@pytest.fixture(scope="session")
def dev():
    return DeviceParams()


@pytest.fixture(scope="session")
def noise():
    return NoiseSpec()


@pytest.fixture(scope="session")
def dataset(dev, noise):
    return pl.generate_dataset(pl.GridSpec(), dev, noise, compensation=True)


@pytest.fixture(scope="session")
def conventional(dev, noise):
    grid = pl.GridSpec(bus_voltages=(300.0,), repeats=1)
    return pl.calibrate_conventional(pl.generate_dataset(grid, dev, noise, compensation=False))


@pytest.fixture(scope="session")
def trained(dataset):
    return pl.calibrate_proposed(dataset, TrainConfig(seed=0))


@pytest.fixture(scope="session")
def evaluation(conventional, trained, dev):
    return pl.evaluate(conventional, trained[0], dev=dev, noise=NoiseSpec(seed_base=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test decides")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    results = item.config._criteria
    failed = rep.failed or (rep.when == "setup" and rep.skipped)
    if rep.when == "call" or failed:
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        prev = results.get(number)
        if prev is None or prev[0] == "PASS":
            results[number] = ("FAIL" if failed else "PASS", title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        line = f"criterion {number:>2}: {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
