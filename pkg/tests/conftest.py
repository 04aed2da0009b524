import pytest

VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Print (and remember) one PASS/FAIL line for an acceptance criterion."""

    def emit(number, name, passed, detail):
        line = f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
