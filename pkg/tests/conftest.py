from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

import pytest

_AC_LINES = {}


@pytest.fixture
def ac_report():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def report(name, ok, detail=""):
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _AC_LINES[name] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _AC_LINES:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_AC_LINES, key=lambda s: int(s.split("-")[1])):
            terminalreporter.write_line(_AC_LINES[name])
