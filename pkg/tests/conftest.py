import pytest

# criterion number -> list of (passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[num]
        ok = all(c[0] for c in checks)
        detail = "; ".join(c[1] for c in checks)
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    """Log one sub-check of an acceptance criterion and return whether it passed."""

    def _record(num, ok, detail):
        ok = bool(ok)
        ACCEPTANCE.setdefault(num, []).append((ok, detail))
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return _record
