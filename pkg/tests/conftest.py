import pytest

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; fails the test when any check failed."""
    def record(number: int, title: str, failures: list[str]) -> None:
        status = "FAIL" if failures else "PASS"
        line = f"{status} criterion {number:>2}: {title}"
        if failures:
            line += " | " + "; ".join(failures)
        request.config.stash.setdefault(ACCEPTANCE, []).append((number, line))
        assert not failures, "; ".join(failures)
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
