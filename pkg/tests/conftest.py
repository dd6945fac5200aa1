import json
from importlib import resources

import numpy as np
import pytest

from lpvlab.cli import example_config_path, load_config

REFERENCE_X = np.array([[0.6240, -0.6951], [-0.6951, 3.1187]])


@pytest.fixture(scope="session")
def cfg():
    return load_config(example_config_path())


@pytest.fixture(scope="session")
def clp(cfg):
    return cfg.clp


@pytest.fixture(scope="session")
def nl(cfg):
    return cfg.nl


@pytest.fixture(scope="session")
def reference_x():
    data = json.loads((resources.files("lpvlab") / "data" / "reference_x.json").read_text())
    return np.array(data["X"])


def closed_form_equilibrium(r, d, k11=5.0, k12=2.0):
    """Equilibrium of the example loop for constant reference r and disturbance d."""
    return np.array([r, (r ** 3 + r - d) / (k12 * r ** 2 + k11)])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
