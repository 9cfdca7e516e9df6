import numpy as np
import pytest

from maxent_pgp.mdp import TabularMdp, random_mdp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def chain_mdp(gamma=0.5):
    """s0 -> s1 with s1 absorbing, a single action, starting in s0."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    return TabularMdp(P, np.array([1.0, 0.0]), gamma, frozenset({1}))


def small_random_mdp(seed=0, n_states=4, n_actions=3, gamma=0.9):
    return random_mdp(np.random.default_rng(seed), n_states, n_actions, gamma)


# criterion number -> (passed, detail); filled by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
