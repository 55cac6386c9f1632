import copy

import pytest

from fastdiff import config as cfgmod


def small_config(name="heat-case1", paths=8, K=4, h=1e-3, T0=0.05, eps=(0.2, 0.1, 0.05), **params):
    """A preset shrunk so a full sweep runs in a few seconds."""
    cfg = cfgmod.preset(name, **params)
    cfg["numerics"].update(K=K, h=h, T0=T0, save_every=10, batch=4)
    cfg["experiment"].update(epsilons=list(eps), paths=paths)
    return copy.deepcopy(cfg)


@pytest.fixture
def small():
    return small_config


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
