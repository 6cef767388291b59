import pytest

ACCEPTANCE = []


@pytest.fixture
def record():
    """``record(criterion, passed, detail)`` collects one acceptance verdict."""
    def _record(criterion, passed, detail=""):
        ACCEPTANCE.append((str(criterion), bool(passed), detail))
    return _record


def _key(item):
    head = item[0].rstrip("abcdefghijklmnopqrstuvwxyz")
    return int(head) if head.isdigit() else 99, item[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=_key):
        terminalreporter.write_line(f"criterion {crit:<4} {'PASS' if ok else 'FAIL'}  {detail}")
