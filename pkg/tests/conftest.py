import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
_VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, name, passed, detail):
        _VERDICTS[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
