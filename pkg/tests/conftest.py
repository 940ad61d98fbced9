import numpy as np
import pytest

from reachopt import arm, nlp, transcribe
from reachopt.lab import SweepConfig


@pytest.fixture(scope="session")
def params():
    return arm.ArmParams()


@pytest.fixture(scope="session")
def noise():
    return arm.NoiseModel()


@pytest.fixture(scope="session")
def rest_state(params):
    return np.r_[arm.inverse_kinematics([0.25, 0.35], params), 0.0, 0.0]


@pytest.fixture(scope="session")
def default_task(params):
    return SweepConfig().task(0.475, 0.12, params)


@pytest.fixture(scope="session")
def solved_plan(default_task, params, noise):
    """Transcription, solution and trajectory of the default reach."""
    tx = transcribe.Transcription(default_task, params, noise)
    sol = nlp.solve(tx.problem(), transcribe.initial_guess(default_task, tx.layout))
    assert sol.converged, sol.status
    return tx, sol, transcribe.extract_trajectory(sol, tx.layout)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        passed, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
