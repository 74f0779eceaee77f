import os

import pytest
from hypothesis import HealthCheck, settings

from dedalus_opt.corpus import ROOT, load_program

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def corpus_root():
    return ROOT


@pytest.fixture(scope="session")
def listing1():
    return load_program("listing1.dl")


@pytest.fixture(scope="session")
def listing2():
    return load_program("listing2.dl")


@pytest.fixture(scope="session")
def kvs():
    return load_program("kvs.dl")


ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
