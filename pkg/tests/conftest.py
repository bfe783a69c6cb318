import numpy as np
import pytest

from stereosr import network

_criteria = []


@pytest.fixture(scope="session")
def archive2():
    return network.random_archive(2, seed=0)


@pytest.fixture(scope="session")
def weights2(archive2):
    return network.unpack(archive2.validate())


@pytest.fixture
def rng():
    return np.random.default_rng(2021)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = dict(report.user_properties).get("criterion")
    if name is not None:
        _criteria.append((name, report.outcome, report.duration))


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, seconds in _criteria:
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{status}  {name}  ({seconds:.2f} s)")
