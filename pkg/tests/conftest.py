VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
