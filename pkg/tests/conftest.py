import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict for the acceptance summary."""
    def record(number, passed, detail):
        _ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
