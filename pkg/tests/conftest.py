import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; returns the pass flag for asserting."""
    lines = request.config.stash[_LINES]

    def record(number, ok, detail, informational=()):
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        lines.append(line)
        for extra in informational:
            info = f"[criterion {number}] info: {extra}"
            print(info)
            lines.append(info)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("]"))):
        terminalreporter.write_line(line)
