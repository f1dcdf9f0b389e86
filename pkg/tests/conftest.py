import numpy as np
import pytest

from adapt.data import gen_synthetic


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Twelve synthetic clips of 8 frames at 64x64."""
    root = tmp_path_factory.mktemp("tiny")
    gen_synthetic(root, 12, seed=3, frames=8, size=64)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
