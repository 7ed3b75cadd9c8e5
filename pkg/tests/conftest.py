import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record ``(criterion, name, passed, detail)`` and echo one line."""

    def record(n, name, passed, detail, soft=False):
        status = "PASS" if passed else ("SOFT-FAIL (advisory)" if soft else "FAIL")
        line = f"criterion {n}: {status}  {name}: {detail}"
        ACCEPTANCE_LINES.append((n, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
