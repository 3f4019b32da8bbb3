import acceptance_log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # One visible line per acceptance criterion, even under captured stdout.
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
