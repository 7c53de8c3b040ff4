from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

import deltafuzz
from deltafuzz.versions import demo_registry

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SEEDS = Path(deltafuzz.__file__).parent / "data" / "seeds"


@pytest.fixture(scope="session")
def seeds_dir() -> Path:
    return SEEDS


@pytest.fixture(scope="session")
def registry():
    return demo_registry()


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
