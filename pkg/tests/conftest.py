import os

import pytest
from hypothesis import HealthCheck, settings

from spikelab import freeconv as fc
from spikelab.measures import Measure

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def mu_pm3():
    return Measure.atomic([-3.0, 3.0])


@pytest.fixture(scope="session")
def semicircle():
    return Measure.semicircle(0.0, 2.0)


@pytest.fixture(scope="session")
def pair_ts(mu_pm3, semicircle):
    return fc.SubordinationPair.additive(mu_pm3, semicircle)


@pytest.fixture(scope="session")
def support_ts(pair_ts):
    return pair_ts.support


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
