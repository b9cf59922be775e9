import math

import numpy as np
import pytest

from markov_games.errors import BadCombination
from markov_games.game_model import make_game
from markov_games.minimax import solve_matrix_game
from markov_games.mz_solver import balanced_lift, mz_fixed_point
from markov_games.nonrevealing import compute_vhat, estimate_vhat_limit
from markov_games.simulator import (
    BehavioralStrategy,
    BlockStrategyConfig,
    CallableStrategy,
    UniformStrategy,
    block_strategy,
    enumerate_plays,
    exact_martingale_gap,
    martingale_diagnostics,
    mixture_law,
    nr_optimal_block_strategy,
    simulate,
    split_strategy,
    track_history,
    transpose_game,
)
from markov_games.tables import ValueTable

from conftest import EXAMPLE_A_M, random_recurrent_matrix, reveal_game


def random_pair(seed, K=2, L=2, I=2, J=2):
    rng = np.random.default_rng(seed)
    spec = make_game(
        rng.uniform(-1, 1, (K, L, I, J)),
        random_recurrent_matrix(rng, K),
        random_recurrent_matrix(rng, L),
        rng.dirichlet(np.ones(K)),
        rng.dirichlet(np.ones(L)),
    )
    return spec, BehavioralStrategy(rng.dirichlet(np.ones(I), K)), BehavioralStrategy(rng.dirichlet(np.ones(J), L))


def test_constant_payoff():
    spec = make_game(np.full((2, 2, 2, 2), 0.3), np.eye(2), np.eye(2))
    res = simulate(spec, UniformStrategy(2), UniformStrategy(2), 5, 20, seed=1)
    assert res.mean == pytest.approx(0.3)
    assert res.standard_error == pytest.approx(0.0, abs=1e-15)


def test_matching_pennies_centered():
    g = np.zeros((1, 1, 2, 2))
    g[0, 0] = [[1, -1], [-1, 1]]
    spec = make_game(g, np.eye(1), np.eye(1))
    res = simulate(spec, UniformStrategy(2), UniformStrategy(2), 10, 2000, seed=3)
    assert abs(res.mean) <= 3 * res.standard_error


@pytest.mark.parametrize("seed", range(20))
def test_tracker_agrees_with_enumeration(seed):
    spec, sigma, tau = random_pair(seed)
    T = 4 if seed < 5 else 3
    enum = enumerate_plays(spec, sigma, tau, T)
    assert math.fsum(enum.law.values()) == pytest.approx(1.0, abs=1e-12)
    for h in enum.law:
        P, Q = track_history(spec, sigma, tau, h)
        for t in range(T + 1):
            p, q = enum.beliefs[h[:t]]
            assert np.abs(P[t] - p).max() <= 1e-10 and np.abs(Q[t] - q).max() <= 1e-10


def test_empirical_law_converges_to_enumeration():
    spec, sigma, tau = random_pair(11)
    T = 2
    exact = enumerate_plays(spec, sigma, tau, T)

    def tv(runs):
        recs = simulate(spec, sigma, tau, T, runs, seed=5).records
        counts = {}
        for r in recs:
            h = tuple(zip(r.actions_i.tolist(), r.actions_j.tolist()))
            counts[h] = counts.get(h, 0) + 1
        return exact.total_variation({h: c / runs for h, c in counts.items()})

    small, large = tv(200), tv(3200)
    assert large < small
    assert large <= 2 * math.sqrt(len(exact.law) / 3200)


@pytest.mark.parametrize("T", [2, 3])
def test_split_distribution_identity(T):
    spec, sigma, tau = random_pair(21)
    rng = np.random.default_rng(2)
    comp = BehavioralStrategy(rng.dirichlet(np.ones(2), 2))
    p1, p2, w = np.array([0.9, 0.1]), np.array([0.2, 0.8]), [0.3, 0.7]
    prior = 0.3 * p1 + 0.7 * p2
    split = split_strategy(w, [(p1, sigma), (p2, comp)])
    lhs = enumerate_plays(spec, split, tau, T, p0=prior)
    rhs = mixture_law([enumerate_plays(spec, sigma, tau, T, p0=p1), enumerate_plays(spec, comp, tau, T, p0=p2)], w)
    assert lhs.total_variation(rhs) <= 1e-10


def test_split_single_component_and_bad_weights():
    s = UniformStrategy(2)
    assert split_strategy([1.0], [([0.5, 0.5], s)]) is s
    with pytest.raises(BadCombination):
        split_strategy([0.5, 0.6], [([1, 0], s), ([0, 1], s)])
    with pytest.raises(BadCombination):
        split_strategy([0.5], [([1, 0], s), ([0, 1], s)])


def test_split_of_nonrevealing_components_keeps_projection_constant():
    g = np.random.default_rng(0).uniform(-1, 1, (3, 1, 2, 2))
    spec = make_game(g, EXAMPLE_A_M, np.eye(1), [0.2, 0.3, 0.5], [1.0])
    p1, p2 = np.array([0.4, 0.1, 0.5]), np.array([0.0, 0.5, 0.5])
    comps = [(p1, BehavioralStrategy([[0.9, 0.1]] * 3)), (p2, BehavioralStrategy([[0.2, 0.8]] * 3))]
    split = split_strategy([0.5, 0.5], comps)
    enum = enumerate_plays(spec, split, UniformStrategy(2), 3)
    B = spec.chain_k.limit_matrix
    for p, _ in enum.beliefs.values():
        np.testing.assert_allclose(p @ B, spec.p0 @ B, atol=1e-12)
    # the split itself reveals within-class information
    assert max(np.abs(p - spec.p0).max() for p, _ in enum.beliefs.values()) > 0.01


def test_revealing_first_move_variation():
    g = np.zeros((1, 2, 1, 2))
    q = np.array([0.3, 0.7])
    spec = make_game(g, np.eye(1), np.eye(2), [1.0], q)
    tau = CallableStrategy(2, lambda ctx, l: np.eye(2)[l] if ctx.t == 0 else np.full(2, 0.5))
    res = simulate(spec, UniformStrategy(1), tau, 6, 50, seed=0)
    for r in res.records:
        l = r.states_l[0]
        total = np.abs(np.diff(r.q_hat, axis=0)).sum()
        assert total == pytest.approx(np.abs(np.eye(2)[l] - q).sum(), abs=1e-12)
    diag = martingale_diagnostics(res.records)
    expected = sum(q[l] * np.abs(np.eye(2)[l] - q).sum() for l in range(2))
    assert abs(diag.variation_mean - expected) <= 4 * diag.variation_se
    assert diag.variation_ok


def test_exact_martingale_property():
    spec, sigma, tau = random_pair(4)
    enum = enumerate_plays(spec, sigma, tau, 3)
    assert exact_martingale_gap(enum, spec.chain_k.limit_matrix, spec.chain_l.limit_matrix) <= 1e-12


def test_seed_determinism_and_projection_invariant():
    spec, sigma, tau = random_pair(8)
    a = simulate(spec, sigma, tau, 15, 30, seed=42)
    b = simulate(spec, sigma, tau, 15, 30, seed=42)
    c = simulate(spec, sigma, tau, 15, 30, seed=43)
    for x, y in zip(a.records, b.records):
        for field in ("states_k", "states_l", "actions_i", "actions_j", "payoffs", "p", "q"):
            assert np.array_equal(getattr(x, field), getattr(y, field))
    assert not np.array_equal(a.payoffs, c.payoffs)
    for r in a.records:
        np.testing.assert_allclose(r.p_hat, r.p @ spec.chain_k.limit_matrix, atol=1e-10)


def test_nr_block_strategy_uniform_when_epsilon_one():
    spec = reveal_game()
    s = nr_optimal_block_strategy(spec, spec.p0, spec.q0, 1, 1.0, [])
    enum = enumerate_plays(spec, s, UniformStrategy(2), 1)
    for h, pr in enum.law.items():
        assert pr == pytest.approx(0.25)


def test_nr_block_strategy_one_stage_identity_is_average_game_optimal():
    spec = reveal_game([0.3, 0.7])
    s = nr_optimal_block_strategy(spec, spec.p0, spec.q0, 1, 0.0, [])
    enum = enumerate_plays(spec, s, UniformStrategy(2), 1)
    ctx_x = s.action_at(0, spec.p0, spec.q0)
    np.testing.assert_allclose(ctx_x[0], ctx_x[1], atol=1e-9)
    avg = 0.3 * spec.payoff[0, 0] + 0.7 * spec.payoff[1, 0]
    value = solve_matrix_game(avg).value
    assert np.min(ctx_x[0] @ avg) >= value - 2e-3
    for p, _ in enum.beliefs.values():
        np.testing.assert_allclose(p, spec.p0, atol=1e-9)


def test_nr_block_strategy_two_stages_is_nonrevealing():
    g = np.random.default_rng(3).uniform(-1, 1, (3, 1, 2, 2))
    spec = make_game(g, EXAMPLE_A_M, np.eye(1), [0.2, 0.3, 0.5], [1.0])
    vhat = compute_vhat(spec, 1, resolution=4)
    s = nr_optimal_block_strategy(spec, spec.p0, spec.q0, 2, 0.1, vhat)
    enum = enumerate_plays(spec, s, UniformStrategy(2), 2)
    B = spec.chain_k.limit_matrix
    for p, _ in enum.beliefs.values():
        np.testing.assert_allclose(p @ B, spec.p0 @ B, atol=1e-9)


@pytest.fixture(scope="module")
def reveal_pipeline():
    spec = reveal_game()
    lim = estimate_vhat_limit(spec, tol=0.02, resolution=10, class_resolution=10)
    mz = mz_fixed_point(lim)
    w = balanced_lift(mz.w, spec.chain_k, spec.chain_l, lim.vhat.grid_p, lim.vhat.grid_q)
    return spec, lim, w


def test_block_strategy_never_splits_below_vhat(reveal_pipeline):
    spec, lim, w = reveal_pipeline
    low = ValueTable.constant(-1.0, w.grid_p, w.grid_q)
    sigma = block_strategy(spec, BlockStrategyConfig(w=low, vhat=lim, T0=1, epsilon=0.05, vhat_tables=[]))
    simulate(spec, sigma, UniformStrategy(2), 6, 20, seed=0)
    assert sigma.split_count == 0


def test_block_strategy_splits_and_reveals(reveal_pipeline):
    spec, lim, w = reveal_pipeline
    sigma = block_strategy(spec, BlockStrategyConfig(w=w, vhat=lim, T0=1, epsilon=0.05, vhat_tables=[]))
    enum = enumerate_plays(spec, sigma, UniformStrategy(2), 1)
    assert sigma.split_count >= 1
    posts = [p for h, (p, _) in enum.beliefs.items() if len(h) == 1]
    assert max(abs(p[0] - 0.5) for p in posts) > 0.3


def test_block_strategy_config_validation(reveal_pipeline):
    spec, lim, w = reveal_pipeline
    with pytest.raises(ValueError):
        BlockStrategyConfig(w=w, vhat=lim, T0=0, epsilon=0.05, vhat_tables=[])
    with pytest.raises(ValueError):
        block_strategy(spec, BlockStrategyConfig(w=w, vhat=lim, T0=1, epsilon=0.6, vhat_tables=[]))


def test_transpose_game_swaps_roles():
    spec, _, _ = random_pair(9, K=2, L=3, I=2, J=4)
    t = transpose_game(spec)
    assert t.shape == (3, 2, 4, 2)
    assert t.payoff[2, 1, 3, 0] == -spec.payoff[1, 2, 0, 3]
    np.testing.assert_array_equal(t.M, spec.N)
