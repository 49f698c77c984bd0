import pytest

CRITERIA: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: slow end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
