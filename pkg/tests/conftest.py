import pytest

ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; returns ``check(number, ok, detail)``."""

    def check(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
