import numpy as np
import pytest

from metashap.benchgen import generate_kb
from metashap.space import CATEGORICAL, CONTINUOUS, INTEGER, HyperparameterSpace, ParamSpec


@pytest.fixture(scope="session")
def synth_kb():
    return generate_kb(10, 400, surface_family_seed=7)


@pytest.fixture(scope="session")
def mixed_space():
    return HyperparameterSpace(
        (
            ParamSpec("C", CONTINUOUS, (1e-3, 1e3), default=1.0, log_scale=True),
            ParamSpec("depth", INTEGER, (1, 20), default=6),
            ParamSpec("kernel", CATEGORICAL, categories=("linear", "poly", "rbf"), default="rbf"),
            ParamSpec("alpha", CONTINUOUS, (0.0, 1.0), default=0.5),
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
