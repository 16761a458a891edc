import pytest

_REPORT = []


@pytest.fixture(scope="session")
def criterion_report():
    """Collects (number, passed, detail) lines printed at the end of the run."""
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_REPORT, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
