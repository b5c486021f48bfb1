import sys
from pathlib import Path

import numpy as np
import pytest

from trpfuse.synthetic import SyntheticConfig, make_dataset

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def ccpe_bytes():
    return (DATA / "ccpe_fixture.json").read_bytes()


@pytest.fixture(scope="session")
def small_synthetic():
    return make_dataset(4, seed=11, cfg=SyntheticConfig(n_frames=1500))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
