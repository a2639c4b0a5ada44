import time
from contextlib import contextmanager

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion; ``state['detail']`` adds measured values."""
    state = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield state
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        detail = f" ({state['detail']})" if state["detail"] else ""
        ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}{detail} [{elapsed:.1f}s]")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
