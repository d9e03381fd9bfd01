"""Collects acceptance verdicts and prints them after the test session."""

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Return ``record(criterion, label, ok, detail)``; each call yields one verdict line."""

    def record(criterion: str, label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  [{criterion}] {label}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
