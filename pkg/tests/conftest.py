import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

_LINES: list[str] = []


@pytest.fixture()
def report():
    """Record one verdict line per acceptance criterion; printed at the end of the run."""

    def add(number: int, ok: bool | None, detail: str) -> None:
        verdict = "REPORT" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number:>2}: {verdict}  {detail}"
        _LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
