import os
from pathlib import Path

import numpy as np
import pytest

from precond_dls.ingest import fixture

BCSSTM07_ENV = "PRECOND_DLS_BCSSTM07"
DATA_DIR = Path(__file__).resolve().parent / "data"


def bcsstm07_path() -> Path:
    """Location of the bcsstm07 Matrix Market file (env override, else tests/data)."""
    env = os.environ.get(BCSSTM07_ENV)
    if env:
        return Path(env)
    for name in ("bcsstm07.mtx", "bcsstm07.mtx.gz"):
        if (DATA_DIR / name).is_file():
            return DATA_DIR / name
    return DATA_DIR / "bcsstm07.mtx"


@pytest.fixture
def oracle():
    return fixture("oracle2x2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
