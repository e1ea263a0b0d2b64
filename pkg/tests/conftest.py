import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pbafem", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pbafem")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_born():
    """Born-like fixture on a coarse grid, cheap enough for unit tests."""
    from pbafem.problems import born_problem

    return born_problem(n=8)


# acceptance results, filled by tests/test_acceptance.py and printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
