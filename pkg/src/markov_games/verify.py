"""Invariant suite run by the ``verify`` command.

Every check reports a measured quantity against a bound; sizes are kept
small so the suite runs in seconds to minutes on desk hardware.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game_model import GameSpec
from .mz_solver import mz_fixed_point
from .nonrevealing import check_fiber_concavity, check_s_lipschitz, compute_vhat, estimate_vhat_limit, nr_constraint
from .simulator import (
    BehavioralStrategy,
    CallableStrategy,
    enumerate_plays,
    exact_martingale_gap,
    martingale_diagnostics,
    mixture_law,
    simulate,
    split_strategy,
    track_history,
)
from .tables import ValueTable
from .value_iteration import SolverOptions, compute_v, stage_strategy


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    bound: float

    @property
    def ok(self) -> bool:
        return bool(self.measured <= self.bound)


def chain_checks(spec: GameSpec) -> list[Check]:
    out = []
    for name, chain in (("k", spec.chain_k), ("l", spec.chain_l)):
        B, M = chain.limit_matrix, chain.matrix
        res = max(np.abs(B @ B - B).max(), np.abs(B @ M - B).max(), np.abs(M @ B - B).max(), np.abs(B.sum(axis=1) - 1).max())
        out.append(Check(f"chain_{name}_limit_projection", float(res), 1e-10))
    return out


def recursion_checks(tables: list[ValueTable], spec: GameSpec, tol: float) -> list[Check]:
    """Increment and balance bounds of the finite-horizon values."""
    mesh = max(tables[0].grid_p.mesh, tables[0].grid_q.mesh)
    slack = 2.0 * (tol + mesh)
    inc = max((np.abs(tables[t].values - tables[t - 1].values).max() - 2.0 / t for t in range(1, len(tables))), default=-np.inf)
    T = len(tables)
    vT = tables[-1]
    shifted = vT.evaluate_product(vT.grid_p.points @ spec.M, vT.grid_q.points @ spec.N)
    bal = np.abs(vT.values - shifted).max() - 4.0 / T
    return [Check("v_increment_excess", float(inc), slack), Check("v_balance_excess", float(bal), slack)]


def nonrevealing_checks(tables: list[ValueTable], spec: GameSpec, tol: float, seed: int) -> list[Check]:
    mesh = max(tables[0].grid_p.mesh, tables[0].grid_q.mesh)
    slack = 2.0 * (tol + 3.0 * mesh)
    rep = check_s_lipschitz(tables, spec.chain_k, spec.chain_l, samples=200, seed=seed)
    conc, conv = check_fiber_concavity(tables[-1], spec.chain_k, spec.chain_l)
    return [
        Check("vhat_s_lipschitz_excess", rep.s_violation, slack),
        Check("vhat_3_lipschitz_excess", rep.norm_violation, slack),
        Check("vhat_fiber_concavity", conc, slack),
        Check("vhat_fiber_convexity", conv, slack),
    ]


def mz_checks(spec: GameSpec, resolution: int, T: int, tol: float) -> list[Check]:
    lim = estimate_vhat_limit(
        spec, tol=0.02, resolution=resolution, class_resolution=2 * resolution, T_start=min(4, T), T_max=max(T, 8), strict=False
    )
    res = mz_fixed_point(lim, tol=1e-3, strict=False)
    mesh = max(lim.vhat.grid_p.mesh, lim.vhat.grid_q.mesh)
    return [
        Check("mz_residual_vex", res.residual_vex, 1e-3),
        Check("mz_residual_cav", res.residual_cav, 1e-3),
        Check("vhat_limit_balance_residual", lim.balanced_residual, 4.0 / lim.T + 2.0 * (tol + 3.0 * mesh)),
    ]


def _random_behavioral(rng, n_states, n_actions):
    return BehavioralStrategy(rng.dirichlet(np.ones(n_actions), size=n_states))


def simulator_checks(spec: GameSpec, seed: int, runs: int) -> list[Check]:
    rng = np.random.default_rng(seed)
    sigma = _random_behavioral(rng, spec.n_k, spec.n_i)
    tau = _random_behavioral(rng, spec.n_l, spec.n_j)
    T = 3
    enum = enumerate_plays(spec, sigma, tau, T)
    tracker = 0.0
    for h in enum.law:
        P, Q = track_history(spec, sigma, tau, h)
        for t in range(T + 1):
            p, q = enum.beliefs[h[:t]]
            tracker = max(tracker, np.abs(P[t] - p).max(), np.abs(Q[t] - q).max())

    # split identity: two components around the prior
    p = spec.p0
    d = rng.dirichlet(np.ones(spec.n_k))
    s = min(0.5, *(p[k] / d[k] for k in range(spec.n_k) if d[k] > p[k])) if np.any(d > p) else 0.5
    p1 = p + s * (d - p)
    p2 = p - s * (d - p)
    comp2 = _random_behavioral(rng, spec.n_k, spec.n_i)
    split = split_strategy([0.5, 0.5], [(p1, sigma), (p2, comp2)])
    tv = enumerate_plays(spec, split, tau, T).total_variation(
        mixture_law([enumerate_plays(spec, sigma, tau, T, p0=p1), enumerate_plays(spec, comp2, tau, T, p0=p2)], [0.5, 0.5])
    )

    # a repeated nonrevealing strategy keeps phat constant on every history
    xc = nr_constraint(spec.chain_k, spec.n_i)
    zero = ValueTable.constant(0.0, *_unit_grids(spec))
    cache = {}

    def nr_play(ctx, state):
        key = tuple(np.round(ctx.own_belief, 12))
        if key not in cache:
            cache[key] = stage_strategy(spec, zero, 1.0, ctx.own_belief, ctx.other_belief, xc, None, SolverOptions())[0]
        return cache[key][state]

    nr = CallableStrategy(spec.n_i, nr_play)
    e_nr = enumerate_plays(spec, nr, tau, 2)
    B = spec.chain_k.limit_matrix
    drift = max(np.abs(bp[0] @ B - spec.p0 @ B).max() for bp in e_nr.beliefs.values())
    mart = exact_martingale_gap(enum, B, spec.chain_l.limit_matrix)

    first = simulate(spec, sigma, tau, 20, min(runs, 50), seed)
    again = simulate(spec, sigma, tau, 20, min(runs, 50), seed)
    same = all(
        np.array_equal(a.payoffs, b.payoffs) and np.array_equal(a.p, b.p) and np.array_equal(a.actions_i, b.actions_i)
        for a, b in zip(first.records, again.records)
    )
    phat = max(np.abs(r.p_hat - r.p @ B).max() for r in first.records)
    sim = simulate(spec, sigma, tau, 50, runs, seed + 1)
    diag = martingale_diagnostics(sim.records)
    return [
        Check("tracker_vs_enumeration", float(tracker), 1e-10),
        Check("split_distribution_identity_tv", float(tv), 1e-10),
        Check("nonrevealing_phat_drift", float(drift), 1e-9),
        Check("exact_martingale_gap", float(mart), 1e-10),
        Check("seed_determinism", 0.0 if same else 1.0, 0.0),
        Check("phat_projection", float(phat), 1e-10),
        Check("qhat_variation_excess", diag.variation_mean - diag.variation_bound, 3.0 * diag.variation_se if runs > 1 else 0.0),
    ]


def _unit_grids(spec: GameSpec):
    from .tables import SimplexGrid

    return SimplexGrid(spec.n_k, 2), SimplexGrid(spec.n_l, 2)


def run_suite(spec: GameSpec, T: int = 4, resolution: int = 4, tol: float = 1e-3, seed: int = 0, runs: int = 200) -> list[Check]:
    """All invariant checks on one game."""
    opts = SolverOptions(tol=tol)
    checks = chain_checks(spec)
    checks += recursion_checks(compute_v(spec, T, resolution, tol, opts), spec, tol)
    checks += nonrevealing_checks(compute_vhat(spec, T, resolution, tol, opts), spec, tol, seed)
    checks += mz_checks(spec, resolution, T, tol)
    checks += simulator_checks(spec, seed, runs)
    return checks
