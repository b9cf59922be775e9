import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_games.errors import NotStochastic, TransientState, ValidationError
from markov_games.game_model import action_marginal, advance, make_game, posterior, posteriors, stage_payoff

from conftest import EXAMPLE_A_M


def test_payoff_out_of_range_names_index():
    g = np.zeros((2, 2, 2, 2))
    g[1, 0, 1, 0] = 1.5
    with pytest.raises(ValidationError, match=r"\[1, 0, 1, 0\]"):
        make_game(g, np.eye(2), np.eye(2))


def test_size_mismatch_and_bad_beliefs():
    with pytest.raises(ValidationError, match="transition_k"):
        make_game(np.zeros((3, 2, 2, 2)), np.eye(2), np.eye(2))
    with pytest.raises(ValidationError, match="p0"):
        make_game(np.zeros((2, 2, 2, 2)), np.eye(2), np.eye(2), p0=[0.7, 0.7])
    with pytest.raises(NotStochastic):
        make_game(np.zeros((2, 2, 2, 2)), [[0.5, 0.4], [0, 1]], np.eye(2))
    with pytest.raises(TransientState):
        make_game(np.zeros((2, 2, 2, 2)), [[0.5, 0.5], [0, 1]], np.eye(2))


def test_stage_payoff_pure():
    rng = np.random.default_rng(0)
    g = rng.uniform(-1, 1, (2, 3, 2, 2))
    spec = make_game(g, np.eye(2), np.eye(3))
    x = np.array([[1, 0], [0, 1.0]])
    y = np.array([[0, 1.0]] * 3)
    assert stage_payoff(spec, [1, 0], [0, 0, 1], x, y) == pytest.approx(g[0, 2, 0, 1])


def test_delta_a_advances_to_first_row():
    np.testing.assert_allclose(advance([1, 0, 0], EXAMPLE_A_M), [2 / 3, 1 / 3, 0])


def test_zero_marginal_keeps_prior():
    p = np.array([0.3, 0.7])
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(posterior(p, x, 1), p)


dirichlet = st.integers(0, 100_000).map(lambda s: np.random.default_rng(s))


@given(dirichlet, st.integers(2, 4), st.integers(2, 4))
@settings(max_examples=100, deadline=None)
def test_posteriors_average_back_to_prior(rng, K, I):
    p = rng.dirichlet(np.ones(K))
    x = rng.dirichlet(np.ones(I), size=K)
    marg, post = posteriors(p, x)
    np.testing.assert_allclose(marg, action_marginal(p, x))
    np.testing.assert_allclose(marg @ post, p, atol=1e-12)
    for i in range(I):
        np.testing.assert_allclose(post[i], posterior(p, x, i), atol=1e-14)
