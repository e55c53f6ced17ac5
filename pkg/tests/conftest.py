import pytest

_LINES = []


class _Recorder:
    def __call__(self, number, ok, detail):
        line = "criterion %2d: %s  %s" % (number, "PASS" if ok else "FAIL", detail)
        _LINES.append(line)
        print(line)
        return ok


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
