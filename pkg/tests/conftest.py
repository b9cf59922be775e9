from pathlib import Path

import numpy as np
import pytest

from markov_games.cli import ingest
from markov_games.game_model import make_game

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

EXAMPLE_A_M = np.array([[2 / 3, 1 / 3, 0.0], [1 / 3, 2 / 3, 0.0], [0.0, 0.0, 1.0]])
EXAMPLE_C_M = np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
EXAMPLE_C_N = np.array([[0.75, 0.25], [1.0, 0.0]])

# Identity-chain game with one informed player: u is 1/2 at the pure beliefs
# and 1/4 on the middle band, so cav u is the constant 1/2.
REVEAL_G1 = np.array([[1.0, 0.5], [-0.5, 0.0]])
REVEAL_G2 = np.array([[0.0, -0.5], [0.5, 1.0]])


def reveal_game(p0=(0.5, 0.5)):
    g = np.zeros((2, 1, 2, 2))
    g[0, 0], g[1, 0] = REVEAL_G1, REVEAL_G2
    return make_game(g, np.eye(2), np.eye(1), p0, [1.0])


def random_recurrent_matrix(rng, n):
    M = rng.uniform(0.05, 1.0, (n, n))
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def example_a():
    return ingest(FIXTURES / "example_a.json")


@pytest.fixture(scope="session")
def example_c():
    return ingest(FIXTURES / "example_c.json")


# verdict lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
