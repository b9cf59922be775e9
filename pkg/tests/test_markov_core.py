import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_games.errors import NotStochastic, TransientState
from markov_games.markov_core import (
    analyze_chain,
    aperiodic_lift,
    check_stochastic,
    class_masses,
    fiber_grid,
    is_balanced,
    lambda_decompose,
    s_value,
)
from markov_games.tables import SimplexGrid, ValueTable

from conftest import EXAMPLE_A_M, EXAMPLE_C_M, EXAMPLE_C_N


def cycle_period(M, k, horizon=60):
    """gcd of the return times to ``k`` found by matrix powers."""
    P = np.eye(len(M))
    g = 0
    for t in range(1, horizon + 1):
        P = P @ (M > 0).astype(float)
        P = (P > 0).astype(float)
        if P[k, k] > 0:
            g = math.gcd(g, t)
    return g


def test_example_a_classes_and_limit():
    ch = analyze_chain(EXAMPLE_A_M)
    assert ch.classes == ((0, 1), (2,))
    np.testing.assert_allclose(ch.invariant_measures, [[0.5, 0.5, 0], [0, 0, 1]], atol=1e-10)
    np.testing.assert_allclose(ch.limit_matrix, [[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 1]], atol=1e-10)
    assert ch.period == 1


def test_example_c_single_class():
    ch_m, ch_n = analyze_chain(EXAMPLE_C_M), analyze_chain(EXAMPLE_C_N)
    assert ch_m.n_classes == ch_n.n_classes == 1
    np.testing.assert_allclose(ch_m.limit_matrix, [[0.5, 0.5]] * 2, atol=1e-10)
    np.testing.assert_allclose(ch_n.limit_matrix, [[0.8, 0.2]] * 2, atol=1e-10)


def test_limit_matrix_matches_high_power():
    M = EXAMPLE_C_N
    np.testing.assert_allclose(analyze_chain(M).limit_matrix, np.linalg.matrix_power(M, 200), atol=1e-12)


@pytest.mark.parametrize(
    "M",
    [
        np.array([[0.0, 1.0], [1.0, 0.0]]),
        np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.0]]),
        np.array([[0, 0.5, 0.5, 0], [0, 0, 0, 1], [0, 0, 0, 1], [1, 0, 0, 0]]),
        np.array([[0.5, 0.5], [1.0, 0.0]]),
    ],
)
def test_period_matches_cycle_gcd(M):
    ch = analyze_chain(M)
    assert ch.period == cycle_period(M, 0)
    lifted = analyze_chain(aperiodic_lift(ch))
    assert lifted.period == 1


def test_transient_states_rejected_unless_allowed():
    M = np.array([[1.0, 0, 0], [0, 1.0, 0], [0.5, 0.25, 0.25]])
    with pytest.raises(TransientState):
        analyze_chain(M)
    ch = analyze_chain(M, allow_transient=True)
    assert ch.transient == (2,)
    np.testing.assert_allclose(ch.limit_matrix[2], [2 / 3, 1 / 3, 0], atol=1e-12)


@pytest.mark.parametrize(
    "M",
    [[[0.5, 0.4], [0.5, 0.5]], [[1.2, -0.2], [0.5, 0.5]], [[1.0]] * 2, [[np.nan, 1.0], [0.0, 1.0]]],
)
def test_not_stochastic(M):
    with pytest.raises(NotStochastic):
        check_stochastic(M)


def test_lambda_decomposition_hand_values():
    ch = analyze_chain(EXAMPLE_A_M)
    d = lambda_decompose([0.2, 0.3, 0.5], ch)
    np.testing.assert_allclose(d.lam, [0.5, 0.5])
    np.testing.assert_allclose(d.conditionals, [[0.4, 0.6, 0], [0, 0, 1]])
    np.testing.assert_allclose(d.recombine(), [0.2, 0.3, 0.5])


def test_lambda_uncharged_class_uses_invariant_measure():
    ch = analyze_chain(EXAMPLE_A_M)
    d = lambda_decompose([0, 0, 1.0], ch)
    np.testing.assert_allclose(d.conditionals[0], [0.5, 0.5, 0])


def test_s_value_hand_values():
    ch = analyze_chain(EXAMPLE_A_M)
    assert s_value([1, 0, 0], [0, 0, 1], ch) == pytest.approx(2.0)
    assert s_value([1, 0, 0], [0, 1, 0], ch) == pytest.approx(2.0)
    assert s_value([0.5, 0.5, 0], [0.5, 0.5, 0], ch) == 0.0


beliefs3 = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v)
)


@given(beliefs3, beliefs3)
@settings(max_examples=200, deadline=None)
def test_s_value_l1_bounds(p, p2):
    ch = analyze_chain(EXAMPLE_A_M)
    l1 = np.abs(p - p2).sum()
    s = s_value(p, p2, ch)
    assert s <= 3 * l1 + 1e-9
    assert s >= np.abs(class_masses(p, ch) - class_masses(p2, ch)).sum() - 1e-12
    assert s_value(p, p, ch) == 0.0


@given(st.integers(2, 5), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_limit_projection_identities(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.6) + np.eye(n) * 0.1
    M /= M.sum(axis=1, keepdims=True)
    ch = analyze_chain(M, allow_transient=True)
    B = ch.limit_matrix
    np.testing.assert_allclose(B @ B, B, atol=1e-9)
    np.testing.assert_allclose(B @ M, B, atol=1e-9)
    np.testing.assert_allclose(M @ B, B, atol=1e-9)
    for r in range(ch.n_classes):
        mu = ch.invariant_measures[r]
        np.testing.assert_allclose(mu @ M, mu, atol=1e-10)


def test_fiber_grid_example():
    ch = analyze_chain(EXAMPLE_A_M)
    pts = fiber_grid([1.0, 0.0], 4, ch)
    assert len(pts) == 5
    for p in pts:
        np.testing.assert_allclose(class_masses(p, ch), [1, 0])
    assert sorted(round(p[0], 6) for p in pts) == [0, 0.25, 0.5, 0.75, 1.0]


def test_is_balanced_detects_unbalanced_function():
    ch = analyze_chain(EXAMPLE_A_M)
    g = SimplexGrid(3, 6)
    f = ValueTable.from_function(lambda p, q: p[0], g, g)
    ok, res = is_balanced(f, ch, ch)
    assert not ok and res > 0
    h = ValueTable.from_function(lambda p, q: (p @ ch.limit_matrix)[2] - (q @ ch.limit_matrix)[0], g, g)
    assert is_balanced(h, ch, ch)[0]
