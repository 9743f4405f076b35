"""Collects the acceptance-criterion verdicts and prints them after the run."""

ACCEPTANCE_LINES = []


def record(criterion, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {name}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def skip_line(criterion, name, reason):
    line = f"[SKIP] criterion {criterion}: {name} ({reason})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
