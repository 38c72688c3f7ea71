import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS, TITLES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in TITLES.items():
        if n in RESULTS:
            ok, detail = RESULTS[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n:>2}. {title}: not run")
