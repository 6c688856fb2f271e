import numpy as np
import pytest

from metric_svm.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs(n_per=20, sep=3.0, scale=0.1, seed=0, d=2):
    """Two isotropic gaussian blobs centred at (+sep, 0, ...) and (-sep, 0, ...)."""
    r = np.random.default_rng(seed)
    centre = np.zeros(d)
    centre[0] = sep
    X = np.vstack([centre + scale * r.standard_normal((n_per, d)),
                   -centre + scale * r.standard_normal((n_per, d))])
    y = np.r_[np.ones(n_per), -np.ones(n_per)]
    return Dataset(X, y, "blobs")


def random_dataset(n, d, seed, shift=0.5):
    r = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    X = r.standard_normal((n, d)) + shift * y[:, None]
    return Dataset(X, y, f"rand{seed}")


@pytest.fixture
def pair():
    return Dataset(np.array([[1.0], [-1.0]]), np.array([1, -1]), "pair")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
