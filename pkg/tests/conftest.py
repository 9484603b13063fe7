import os
import time
from collections import namedtuple

import pytest

from concad.cli import run
from concad.experiment import CONFIG_DIR

DESK_MANIFEST = os.path.join(CONFIG_DIR, "desk.yaml")

DeskRun = namedtuple("DeskRun", "out seconds")

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One full desk-scale training run through the CLI, shared across tests."""
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    assert run(["train", "--manifest", DESK_MANIFEST, "--out", str(out)]) == 0
    return DeskRun(out, time.perf_counter() - t0)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(name, ok, detail=""):
        line = f"{'SKIP' if ok is None else 'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
