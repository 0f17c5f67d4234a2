import pytest

from spikelab.groundstate import solve_ground_state


@pytest.fixture(scope="session")
def gs2():
    return solve_ground_state(2, 3.0)


@pytest.fixture(scope="session")
def gs3():
    return solve_ground_state(3, 3.0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
