import pytest

_VERDICTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(number, name, passed, detail)."""
    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        _VERDICTS.append((number, name, bool(passed), detail))
        print(f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d} {name}: {detail}")
