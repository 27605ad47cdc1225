import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

#: Filled by the acceptance suite: criterion number -> (passed, summary line).
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
