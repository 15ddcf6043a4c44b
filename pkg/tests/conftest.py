import pytest

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one criterion line; ``ok=None`` marks an informational line."""
    lines = request.config.stash[VERDICTS]

    def record(tag: str, ok, detail: str):
        word = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{tag} {word}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
