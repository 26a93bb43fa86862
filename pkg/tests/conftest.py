import numpy as np
import pytest

from acceptance_report import REPORT


def _load(names):
    import skimage.data as data

    return [(n, getattr(data, n)()) for n in names]


#: evaluation images, disjoint from the training corpus below
SUITE_NAMES = (
    "astronaut", "camera", "coffee", "chelsea", "moon",
    "immunohistochemistry", "brick", "grass", "gravel", "clock",
)
TRAINING_NAMES = ("rocket", "coins", "retina", "hubble_deep_field")


@pytest.fixture(scope="session")
def natural_suite():
    return _load(SUITE_NAMES)


@pytest.fixture(scope="session")
def training_corpus():
    return [img for _, img in _load(TRAINING_NAMES)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
