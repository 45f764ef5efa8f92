import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bilevelopt.oracle import ProblemDims  # noqa: E402
from bilevelopt.problems import (  # noqa: E402
    make_quadratic,
    make_synthetic_hyperclean,
    make_synthetic_logreg,
    make_toy_ridge,
)
from bilevelopt.problems.ridge import RidgeHyperProblem  # noqa: E402


@pytest.fixture(scope="session")
def quad():
    return make_quadratic(0, ProblemDims(n=8, m=8, p=5, d=5), mu=0.5)


@pytest.fixture(scope="session")
def quad_small():
    return make_quadratic(1, ProblemDims(n=6, m=6, p=4, d=3), mu=0.5)


@pytest.fixture(scope="session")
def ridge():
    return make_toy_ridge(0)


@pytest.fixture(scope="session")
def logreg():
    return make_synthetic_logreg(n=500, m=500, p=22, seed=0)


@pytest.fixture(scope="session")
def hyperclean_small():
    return make_synthetic_hyperclean(n_train=120, n_val=60, n_test=60, n_features=6,
                                     num_classes=4, p_corrupt=0.5, seed=0)


@pytest.fixture(scope="session")
def ridge_small(ridge):
    return RidgeHyperProblem(ridge.X_train[:40], ridge.y_train[:40], ridge.X_val[:30],
                             ridge.y_val[:30])


@pytest.fixture(scope="session")
def logreg_small():
    return make_synthetic_logreg(n=40, m=30, p=6, seed=1)


@pytest.fixture(scope="session")
def hyperclean_tiny():
    return make_synthetic_hyperclean(n_train=40, n_val=30, n_test=20, n_features=5,
                                     num_classes=3, p_corrupt=0.5, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_runtest_logreport(report):
    if report.when == "call":
        for name, value in report.user_properties:
            if name == "acceptance":
                _ACCEPTANCE_LINES.append(value)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
