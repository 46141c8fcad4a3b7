import sys


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, captured or not."""
    for name, mod in list(sys.modules.items()):
        lines = getattr(mod, "ACCEPTANCE_LINES", None)
        if name.endswith("test_acceptance") and lines:
            terminalreporter.section("acceptance criteria")
            for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
                terminalreporter.write_line(line)
