"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
