import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(name, ok, detail)``: print one verdict line and keep it for the run summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(name, ok, detail="", soft=False):
        verdict = ("PASS" if ok else "FAIL") if ok is not None else "INFO"
        if soft and ok is False:
            verdict = "FAIL (soft, non-blocking)"
        line = f"{verdict:<26} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
