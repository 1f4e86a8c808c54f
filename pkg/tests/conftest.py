ACCEPTANCE_LINES = {}


def record(number, title, checks):
    """Store one summary line per acceptance criterion; ``checks`` maps sub-check name to (ok, detail)."""
    failed = [f"{name}: {detail}" for name, (ok, detail) in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    text = f"criterion {number:>2} {status}  {title}"
    if failed:
        text += "  [" + "; ".join(failed) + "]"
    ACCEPTANCE_LINES[number] = text
    print(text)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
