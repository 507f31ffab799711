import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdicts where capture cannot hide them."""
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None) if mod else None
    if verdicts:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
