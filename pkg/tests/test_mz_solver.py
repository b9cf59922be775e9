import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from markov_games.errors import NotConverged, PreconditionViolated
from markov_games.markov_core import analyze_chain
from markov_games.mz_solver import (
    _upper_hull_1d,
    balanced_lift,
    cav_i,
    concave_envelope_at,
    membership_c_minus,
    membership_c_plus,
    mz_fixed_point,
    mz_residuals,
    splitting_for_cav,
    vex_ii,
)
from markov_games.tables import SimplexGrid, ValueTable

from conftest import EXAMPLE_A_M


def scipy_cav(points, values, target):
    res = linprog(-values, A_eq=points.T, b_eq=target, bounds=[(0, None)] * len(values))
    return -res.fun


@given(st.integers(0, 100_000), st.integers(2, 12))
@settings(max_examples=100, deadline=None)
def test_hull_matches_lp(seed, n):
    rng = np.random.default_rng(seed)
    g = SimplexGrid(2, n)
    v = rng.uniform(-1, 1, len(g))
    t = g.points[:, 1]
    order = np.argsort(t)
    env, _ = _upper_hull_1d(t[order], v[order], t)
    for a, p in enumerate(g.points):
        assert env[a] == pytest.approx(scipy_cav(g.points, v, p), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_envelope_lp_three_states(seed):
    rng = np.random.default_rng(seed)
    g = SimplexGrid(3, 4)
    v = rng.uniform(-1, 1, len(g))
    target = rng.dirichlet(np.ones(3))
    val, split = concave_envelope_at(g.points, v, target)
    assert val == pytest.approx(scipy_cav(g.points, v, target), abs=1e-9)
    assert len(split) <= 3
    np.testing.assert_allclose(split.mean, target, atol=1e-10)


def test_cav_of_shifted_positive_part_on_full_simplex():
    g = SimplexGrid(3, 30)
    f = ValueTable.from_function(lambda p, q: max(p[1] - 1 / 3, 0.0), g, SimplexGrid(1, 1))
    assert cav_i(f).evaluate([0, 0, 1], [1.0]) == pytest.approx(0.0, abs=1e-12)


def test_cav_is_identity_on_concave_and_linear():
    g = SimplexGrid(2, 10)
    f = ValueTable.from_function(lambda p, q: p[0] * (1 - p[0]) + q[0], g, g)
    np.testing.assert_allclose(cav_i(f).values, f.values, atol=1e-12)
    lin = ValueTable.from_function(lambda p, q: 0.3 * p[0] - q[1], g, g)
    np.testing.assert_allclose(vex_ii(lin).values, lin.values, atol=1e-12)


def test_vex_is_minus_cav_of_minus():
    rng = np.random.default_rng(0)
    g = SimplexGrid(2, 6)
    f = ValueTable(g, g, rng.uniform(-1, 1, (len(g), len(g))))
    neg = f.with_values(-f.values.T)
    swapped = ValueTable(g, g, -cav_i(neg).values.T)
    np.testing.assert_allclose(vex_ii(f).values, swapped.values, atol=1e-12)


def test_cav_slice_matches_table():
    rng = np.random.default_rng(1)
    g = SimplexGrid(3, 4)
    f = ValueTable(g, SimplexGrid(2, 2), rng.uniform(-1, 1, (len(g), 3)))
    col = cav_i(f, q=f.grid_q.points[1])
    np.testing.assert_allclose(col, cav_i(f).values[:, 1], atol=1e-10)


@pytest.fixture
def mz_input():
    g = SimplexGrid(2, 10)
    # sign structure of a game where both sides gain from their information
    return ValueTable.from_function(lambda p, q: (p[0] - 0.5) ** 2 - (q[0] - 0.5) ** 2 + 0.2 * p[0] * q[1], g, g)


def test_mz_fixed_point_and_uniqueness(mz_input):
    a = mz_fixed_point(mz_input, tol=1e-6)
    b = mz_fixed_point(mz_input, tol=1e-6, w0=1.0)
    c = mz_fixed_point(mz_input, tol=1e-6, w0=-1.0)
    assert max(mz_residuals(a.w, mz_input)) <= 1e-6
    assert a.w.sup_distance(b.w) <= 2e-6 and a.w.sup_distance(c.w) <= 2e-6
    assert membership_c_plus(a.w, mz_input, 1e-6)[0]
    assert membership_c_minus(a.w, mz_input, 1e-6)[0]


def test_mz_of_concave_convex_function_is_itself():
    g = SimplexGrid(2, 8)
    f = ValueTable.from_function(lambda p, q: -(p[0] - 0.4) ** 2 + (q[0] - 0.7) ** 2, g, g)
    np.testing.assert_allclose(mz_fixed_point(f, tol=1e-9).w.values, f.values, atol=1e-9)


def test_mz_strict_raises(mz_input):
    with pytest.raises(NotConverged) as info:
        mz_fixed_point(mz_input, tol=0.0, max_iter=1, w0=1.0)
    assert info.value.result.iterations == 1


def test_splitting_for_cav_preserves_mean_and_value():
    g = SimplexGrid(2, 10)
    f = ValueTable.from_function(lambda p, q: abs(p[0] - 0.5), g, SimplexGrid(1, 1))
    w = cav_i(f)
    p = np.array([0.5, 0.5])
    split = splitting_for_cav(w, f, p, [1.0])
    np.testing.assert_allclose(split.mean, p, atol=1e-12)
    assert sum(wt * f.evaluate(a, [1.0]) for wt, a in zip(split.weights, split.atoms)) == pytest.approx(w.evaluate(p, [1.0]))
    triv = splitting_for_cav(f, f, p, [1.0])
    assert len(triv) == 1
    too_high = w.with_values(w.values + 0.3)
    with pytest.raises(PreconditionViolated):
        splitting_for_cav(too_high, f, p, [1.0])


def test_balanced_lift_constant_and_class_dependence():
    ch = analyze_chain(EXAMPLE_A_M)
    cg = SimplexGrid(2, 4)
    full = SimplexGrid(3, 4)
    w = balanced_lift(ValueTable.constant(0.7, cg, cg), ch, ch, full, full)
    np.testing.assert_allclose(w.values, 0.7)
    w2 = balanced_lift(ValueTable.from_function(lambda l, m: l[1] - m[0], cg, cg), ch, ch, full, full)
    for a in (0, 3, 9):
        for b in (1, 4):
            p, q = full.points[a], full.points[b]
            assert w2.values[a, b] == pytest.approx(p[2] - q[0] - q[1])
