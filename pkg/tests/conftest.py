import pytest

# (criterion number, passed, detail) recorded by tests/test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE.append((number, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
