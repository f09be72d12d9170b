import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import warnings

import pytest

from cpusiot import data_path
from cpusiot.process import generate_pim
from cpusiot.product import parse_product_model
from cpusiot.platform_sim import load_scenario

SCENARIO = data_path("gregor_scenario.yaml")


def gregor_model():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_product_model(Path(data_path("gregor.ttl")).read_text())


@pytest.fixture(scope="session")
def gregor_pim():
    return generate_pim(gregor_model())


@pytest.fixture
def platform():
    return load_scenario(SCENARIO, seed=3)


_ACCEPTANCE: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is None:
        return
    key = f"criterion {crit.args[0]:>2}: {crit.args[1]}"
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[key] = "PASS" if rep.passed else "FAIL"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[1].rstrip(":"))):
        terminalreporter.write_line(f"{_ACCEPTANCE[key]}  {key}")
