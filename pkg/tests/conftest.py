from __future__ import annotations

import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; shown in the terminal summary."""
    def record(n: int, ok: bool, detail: str) -> None:
        line = f"[acceptance {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
