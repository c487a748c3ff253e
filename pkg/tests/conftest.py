import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                lines.append((rep.nodeid.split("::")[-1], outcome))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(
                f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}"
            )
