import pytest

_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(n, title, passed, detail)."""
    def record(n, title, passed, detail=""):
        line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE.append((n, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
