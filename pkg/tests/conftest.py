import time

import numpy as np
import pytest

from sdaesim.convergence import run_study
from sdaesim.models import example3d

ACCEPTANCE_LINES = []

STUDY_SEEDS = list(range(1, 9))
STUDY_N_REF = 2**14
STUDY_RESOLUTIONS = [2**k for k in range(5, 11)]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex3d():
    return example3d()


@pytest.fixture(scope="session")
def serial_study(ex3d):
    start = time.perf_counter()
    study = run_study(ex3d, STUDY_SEEDS, STUDY_N_REF, STUDY_RESOLUTIONS, parallel=False)
    study.metadata["elapsed_s"] = time.perf_counter() - start
    return study


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
