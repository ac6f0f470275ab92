"""Collects one verdict line per acceptance criterion and prints them after the run."""

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    RESULTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
