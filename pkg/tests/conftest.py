import functools

import pytest

from mirrorfreq.sweep import default_plan, run_sweep

# acceptance scoreboard, filled by test_acceptance and echoed at the end
SCOREBOARD = {}


@functools.lru_cache(maxsize=None)
def cached_sweep(case: str, injection: str = "shunt"):
    """Default-grid sweep, computed once per session."""
    return run_sweep(default_plan(case, injection), threads=4)


@pytest.fixture(scope="session")
def sweep_of():
    return cached_sweep


def pytest_terminal_summary(terminalreporter):
    if not SCOREBOARD:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(SCOREBOARD):
        terminalreporter.write_line(SCOREBOARD[key])
