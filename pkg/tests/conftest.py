import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from ringtrack.config import make_config
from ringtrack.kinematics import RobotModel, rings_from_config

# Acceptance results, printed once at the end of the session.
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def cfg():
    return make_config()


@pytest.fixture
def robot(cfg):
    return RobotModel.from_config(cfg)


@pytest.fixture
def rings(cfg):
    return rings_from_config(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
