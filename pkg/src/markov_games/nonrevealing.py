"""Nonrevealing values: the NR(p) polytopes, the constrained recursion,
S-Lipschitz regularity checks and the balanced limit on the class simplices."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ToleranceNotReached
from .game_model import GameSpec
from .markov_core import POSITIVE_MASS, ChainAnalysis, class_masses, fiber_grid, s_value
from .minimax import Polytope
from .tables import SimplexGrid, ValueTable
from .value_iteration import SolverOptions, StageSolver, run_recursion


def nr_polytope(p, analysis: ChainAnalysis, n_actions: int, support=None) -> Polytope:
    """Behavioral actions at ``p`` whose posteriors keep every class mass fixed.

    Variables are the rows ``x^k`` for ``k`` in ``support`` (all states by
    default), concatenated.  For each charged class ``r`` and action ``i``:
    ``sum_{k in K(r)} p^k x^k(i) = lambda^r * sum_k p^k x^k(i)``.
    """
    p = np.asarray(p, dtype=float)
    S = np.arange(p.size) if support is None else np.asarray(support, dtype=int)
    lam = class_masses(p, analysis)
    charged = np.flatnonzero(lam > POSITIVE_MASS)
    blocks = (n_actions,) * len(S)
    if len(charged) <= 1:
        return Polytope(blocks=blocks)
    cls = analysis.class_of[S]
    I = n_actions
    rows = []
    for r in charged:
        for i in range(I):
            row = np.zeros((len(S), I))
            row[:, i] = p[S] * ((cls == r).astype(float) - lam[r])
            rows.append(row.ravel())
    A_eq = np.array(rows)
    b_eq = np.zeros(len(rows))

    members = [np.flatnonzero(cls == r) for r in charged]
    weights = p[S]
    masses = np.array([weights[m].sum() for m in members])

    def retract(points: np.ndarray) -> np.ndarray:
        B = points.shape[0]
        xs = points.reshape(B, len(S), I).copy()
        cond = [np.einsum("k,bki->bi", weights[m], xs[:, m, :]) / mass for m, mass in zip(members, masses)]
        overall = sum(mass * c for mass, c in zip(masses, cond)) / masses.sum()
        for m, c in zip(members, cond):
            d = xs[:, m, :] - c[:, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(d < 0, overall[:, None, :] / -d, np.inf)
            t = np.minimum(1.0, lim.reshape(B, -1).min(axis=1))
            xs[:, m, :] = np.clip(overall[:, None, :] + t[:, None, None] * d, 0.0, None)
        xs /= xs.sum(axis=2, keepdims=True)
        return xs.reshape(B, -1)

    return Polytope(blocks=blocks, A_eq=A_eq, b_eq=b_eq, retraction=retract)


def nr_constraint(analysis: ChainAnalysis, n_actions: int):
    """Constraint factory for the stage solver."""
    return lambda belief, support: nr_polytope(belief, analysis, n_actions, support)


def nr_solver(
    spec: GameSpec,
    resolution: int,
    options: SolverOptions = SolverOptions(),
    players: str = "both",
) -> StageSolver:
    """Stage solver whose strategy sets are NR polytopes for the chosen players."""
    if players not in ("both", "x", "y"):
        raise ValueError("players must be 'both', 'x' or 'y'")
    xc = nr_constraint(spec.chain_k, spec.n_i) if players in ("both", "x") else None
    yc = nr_constraint(spec.chain_l, spec.n_j) if players in ("both", "y") else None
    return StageSolver(spec, resolution, options, xc, yc, lipschitz=3.0)


def compute_vhat(
    spec: GameSpec,
    T: int,
    resolution: int = 10,
    tol: float = 1e-3,
    options: SolverOptions | None = None,
    players: str = "both",
) -> list[ValueTable]:
    """Nonrevealing values vhat_1..vhat_T, tagged 3-Lipschitz.

    ``players`` restricts only one side when set to ``'x'`` or ``'y'``.
    """
    opts = replace(options or SolverOptions(), tol=tol)
    return run_recursion(nr_solver(spec, resolution, opts, players), T)


@dataclass
class LipschitzReport:
    s_violation: float  # worst f(p,q) - f(p',q) - S(p,p') (and the q analogue)
    norm_violation: float  # worst |f(p,q) - f(p',q)| - 3 ||p - p'||
    pairs: int

    def ok(self, tol: float) -> bool:
        return self.s_violation <= tol and self.norm_violation <= tol


def check_s_lipschitz(
    tables,
    chain_k: ChainAnalysis,
    chain_l: ChainAnalysis,
    samples: int = 500,
    seed: int = 0,
) -> LipschitzReport:
    """Sample grid-point pairs and measure the worst slack in the S-bounds.

    For each sampled ``(p, p', q)``: ``f(p,q) - f(p',q) - S(p,p')``; for each
    ``(p, q, q')``: ``f(p,q) - f(p,q') - S(q',q)``.  The weaker 3-Lipschitz
    bound is measured on the same pairs.  Returns the maxima (negative means
    the bound holds with room to spare).
    """
    if isinstance(tables, ValueTable):
        tables = [tables]
    rng = np.random.default_rng(seed)
    s_worst = -np.inf
    n_worst = -np.inf
    count = 0
    for f in tables:
        P, Q = f.grid_p.points, f.grid_q.points
        for _ in range(samples):
            a, a2 = rng.integers(len(P), size=2)
            b, b2 = rng.integers(len(Q), size=2)
            dp = f.values[a, b] - f.values[a2, b]
            dq = f.values[a, b] - f.values[a, b2]
            s_worst = max(s_worst, dp - s_value(P[a], P[a2], chain_k), dq - s_value(Q[b2], Q[b], chain_l))
            n_worst = max(
                n_worst,
                abs(dp) - 3.0 * np.abs(P[a] - P[a2]).sum(),
                abs(dq) - 3.0 * np.abs(Q[b] - Q[b2]).sum(),
            )
            count += 1
    return LipschitzReport(float(s_worst), float(n_worst), count)


def check_fiber_concavity(
    f: ValueTable,
    chain_k: ChainAnalysis,
    chain_l: ChainAnalysis,
    class_resolution: int = 4,
    fiber_resolution: int = 4,
) -> tuple[float, float]:
    """Worst midpoint violations of concavity in p and convexity in q along fibers.

    Fibers are the sets of beliefs with fixed class masses; beliefs off the
    table grid are interpolated.  Returns ``(concavity_violation,
    convexity_violation)``; each is ``max(0, ...)``.
    """
    conc = 0.0
    conv = 0.0
    lam_k = SimplexGrid(chain_k.n_classes, class_resolution).points
    lam_l = SimplexGrid(chain_l.n_classes, class_resolution).points
    q_anchor = [chain_l.lift(m) for m in lam_l]
    p_anchor = [chain_k.lift(m) for m in lam_k]
    for lam in lam_k:
        pts = np.array(fiber_grid(lam, fiber_resolution, chain_k))
        if len(pts) < 2:
            continue
        a, b = np.triu_indices(len(pts), 1)
        mids = 0.5 * (pts[a] + pts[b])
        Q = np.array(q_anchor)
        vp = f.evaluate_product(pts, Q)
        vm = f.evaluate_product(mids, Q)
        conc = max(conc, float(np.max(0.5 * (vp[a] + vp[b]) - vm)))
    for mu in lam_l:
        pts = np.array(fiber_grid(mu, fiber_resolution, chain_l))
        if len(pts) < 2:
            continue
        a, b = np.triu_indices(len(pts), 1)
        mids = 0.5 * (pts[a] + pts[b])
        P = np.array(p_anchor)
        vq = f.evaluate_product(P, pts)
        vm = f.evaluate_product(P, mids)
        conv = max(conv, float(np.max(vm - 0.5 * (vq[:, a] + vq[:, b]))))
    return conc, conv


@dataclass
class NrLimit:
    """Balanced limit of the nonrevealing values, stored on the class simplices.

    ``table`` is indexed by class masses ``(lambda(p), lambda(q))``.
    ``error_bound`` is the last doubling increment plus the interpolation
    error of the finest table.
    """

    table: ValueTable
    error_bound: float
    balanced_residual: float
    T: int
    converged: bool
    chain_k: ChainAnalysis
    chain_l: ChainAnalysis
    schedule: list = field(default_factory=list)
    vhat: ValueTable | None = None

    def evaluate(self, p, q) -> float:
        return self.table.evaluate(class_masses(p, self.chain_k), class_masses(q, self.chain_l))


def reduce_to_classes(
    f: ValueTable, chain_k: ChainAnalysis, chain_l: ChainAnalysis, class_resolution: int
) -> ValueTable:
    """Values of ``f`` at the invariant lifts of a grid on the class simplices."""
    gk = SimplexGrid(chain_k.n_classes, class_resolution)
    gl = SimplexGrid(chain_l.n_classes, class_resolution)
    P = gk.points @ chain_k.invariant_measures
    Q = gl.points @ chain_l.invariant_measures
    vals = f.evaluate_product(P, Q)
    return ValueTable(gk, gl, vals, lipschitz=f.lipschitz)


def balanced_residual(f: ValueTable, chain_k: ChainAnalysis, chain_l: ChainAnalysis) -> float:
    """max |f(p,q) - f(pB, qC)| over the grid of ``f``."""
    P, Q = f.grid_p.points, f.grid_q.points
    proj = f.evaluate_product(P @ chain_k.limit_matrix, Q @ chain_l.limit_matrix)
    return float(np.max(np.abs(proj - f.values)))


def estimate_vhat_limit(
    spec: GameSpec,
    tol: float = 0.02,
    resolution: int = 10,
    class_resolution: int = 20,
    T_start: int = 4,
    T_max: int = 128,
    options: SolverOptions = SolverOptions(),
    strict: bool = True,
) -> NrLimit:
    """Estimate vhat = lim vhat_T by doubling T until successive tables agree within ``tol``.

    Raises ToleranceNotReached (carrying the estimate) when ``T_max`` is
    reached first and ``strict`` is set.
    """
    solver = nr_solver(spec, resolution, options)
    tables = run_recursion(solver, T_start)
    current = tables[-1]
    T = T_start
    schedule = []
    increment = np.inf
    while True:
        nxt = run_recursion(solver, 2 * T, start=current, t0=T)[-1]
        increment = nxt.sup_distance(current)
        schedule.append({"T": 2 * T, "increment": increment})
        current, T = nxt, 2 * T
        if increment <= tol or 2 * T > T_max:
            break
    reduced = reduce_to_classes(current, spec.chain_k, spec.chain_l, class_resolution)
    result = NrLimit(
        table=reduced,
        error_bound=float(increment + current.interpolation_error),
        balanced_residual=balanced_residual(current, spec.chain_k, spec.chain_l),
        T=T,
        converged=bool(increment <= tol),
        chain_k=spec.chain_k,
        chain_l=spec.chain_l,
        schedule=schedule,
        vhat=current,
    )
    result.table.meta.update({"schedule": "doubling", "T": T, "increments": [s["increment"] for s in schedule]})
    if strict and not result.converged:
        raise ToleranceNotReached(f"vhat increment {increment:.3g} above {tol:.3g} at T = {T}", result)
    return result
