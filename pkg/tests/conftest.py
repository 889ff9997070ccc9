import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from ssmpar.models_gallery import bernoulli_beam, coupled_mathieu, prismatic_beam, self_excited_oscillator
from ssmpar.spectral import UnstableMasterWarning, solve_master_modes

ORACLE_FILE = Path(__file__).with_name("oracles") / "frozen_oracles.json"


@pytest.fixture(scope="session")
def frozen_oracles():
    return json.loads(ORACLE_FILE.read_text())


@pytest.fixture(scope="session")
def mathieu():
    return coupled_mathieu()


@pytest.fixture(scope="session")
def self_excited():
    return self_excited_oscillator()


@pytest.fixture(scope="session")
def beam5():
    return bernoulli_beam(elements=5, sigma=1.0)


@pytest.fixture(scope="session")
def prismatic():
    return prismatic_beam()


@pytest.fixture(scope="session")
def gallery_models(mathieu, self_excited, beam5, prismatic):
    return {"coupled_mathieu": mathieu, "self_excited_oscillator": self_excited,
            "bernoulli_beam": beam5, "prismatic_beam": prismatic}


def master(model, **kw):
    """Master subspace with the positive-real-part warning silenced."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnstableMasterWarning)
        return solve_master_modes(model, **kw)


@pytest.fixture(scope="session")
def mathieu_mode2(mathieu):
    return master(mathieu, mode_indices=[2])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one ``CRITERION`` line; the lines are repeated in the terminal summary."""
    def emit(label, passed, detail):
        line = f"CRITERION {label}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
