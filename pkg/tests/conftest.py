import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: str, passed: bool, detail: str, seconds: float | None = None) -> None:
        tail = f" [{seconds:.1f}s]" if seconds is not None else ""
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}{tail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
