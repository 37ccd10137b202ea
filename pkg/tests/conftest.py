import pytest

# criterion id -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(cid, passed, detail=""):
        ACCEPTANCE[cid] = (bool(passed), detail)
        assert passed, f"criterion {cid} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in range(1, 10):
        passed, detail = ACCEPTANCE.get(cid, (False, "not evaluated"))
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if passed else 'FAIL'}  {detail}")
