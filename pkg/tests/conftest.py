acceptance_verdicts = []


def pytest_terminal_summary(terminalreporter):
    # capture is torn down by now, so these lines reach the console in any
    # pytest invocation
    if acceptance_verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
