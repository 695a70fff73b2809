"""Shared fixtures and the acceptance-criterion summary."""

from __future__ import annotations

import pytest

_RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)`` returns ``passed``."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _RESULTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[number])
