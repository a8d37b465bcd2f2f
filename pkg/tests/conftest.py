import pytest

CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, name, ok, detail)``."""

    def record(n, name, ok, detail=""):
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        CRITERIA.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERIA, key=lambda x: x[0]):
        terminalreporter.write_line(line)
