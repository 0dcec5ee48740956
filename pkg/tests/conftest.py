import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[i]
        terminalreporter.write_line(f"criterion {i:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
