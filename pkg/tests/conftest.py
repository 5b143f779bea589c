import pytest

CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line; printed in the terminal summary."""
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
