import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = []


class Verdict:
    """Records one pass/fail line per acceptance criterion."""

    def __call__(self, label, passed, detail):
        _VERDICTS.append((label, bool(passed), detail))
        print(f"[{label}] {'PASS' if passed else 'FAIL'}: {detail}")
        return bool(passed)


@pytest.fixture
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"{label:<4} {'PASS' if passed else 'FAIL'}  {detail}")
