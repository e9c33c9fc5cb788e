"""Shared pytest plumbing: acceptance criteria result lines."""

_criterion_lines = {}


def record_criterion(number, line):
    _criterion_lines[number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[number])
