ACCEPTANCE_LINES = []


def record_acceptance(number, passed, description, detail=""):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {description}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
