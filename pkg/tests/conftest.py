import pytest

# Filled by tests/test_acceptance.py: criterion number -> (passed, summary line).
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, line = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {num}: {line}")


@pytest.fixture
def acceptance_results():
    return ACCEPTANCE_RESULTS
