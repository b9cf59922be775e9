"""Finite-horizon values on a belief grid by backward recursion.

One stage of the recursion at ``(p, q)`` is the game

    phi(x, y) = alpha * G(p, q, x, y)
                + (1 - alpha) * sum_ij x(p)(i) y(q)(j) f(p_i M, q_j N)

where ``p_i`` and ``q_j`` are the posteriors.  With ``f`` interpolated on
the grid, ``f(p', q') = lam(p') @ V @ mu(q')`` and the continuation term
collapses to ``U(x) @ V @ W(y)`` with ``U(x) = sum_i x(p)(i) lam(p_i M)``.
Together with the joint laws ``z = (p^k x^k(i))`` this writes ``phi`` as a
bilinear form in per-player features, which is what the saddle solver
exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .game_model import ZERO_MARGINAL, GameSpec
from .markov_core import POSITIVE_MASS
from .minimax import FeatureObjective, Polytope, SaddleResult, saddle_eval
from .tables import SimplexGrid, ValueTable

# (belief, support) -> Polytope over the support blocks, or None for the full product
ConstraintFactory = Callable[[np.ndarray, np.ndarray], "Polytope | None"]


@dataclass(frozen=True)
class SolverOptions:
    """Accuracy knobs for one stage of the recursion.

    ``tol`` is the target saddle gap; ``action_resolution`` caps the
    per-state action grid (certification uses twice that resolution).
    """

    tol: float = 1e-3
    start_resolution: int = 2
    action_resolution: int = 8


class BeliefSide:
    """One player's strategy space and feature map at a fixed belief."""

    def __init__(self, belief, n_actions: int, grid: SimplexGrid, matrix, constraint: ConstraintFactory | None = None):
        self.belief = np.asarray(belief, dtype=float)
        self.n_states = self.belief.size
        self.n_actions = n_actions
        self.grid = grid
        self.matrix = np.asarray(matrix, dtype=float)
        self.support = np.flatnonzero(self.belief > POSITIVE_MASS)
        poly = constraint(self.belief, self.support) if constraint is not None else None
        self.polytope = poly if poly is not None else Polytope(blocks=(n_actions,) * len(self.support))
        self.cache: dict = {}

    @property
    def n_features(self) -> int:
        return self.n_states * self.n_actions + len(self.grid)

    def features(self, flat) -> np.ndarray:
        flat = np.atleast_2d(flat)
        B = flat.shape[0]
        S, n_a, K = self.support, self.n_actions, self.n_states
        xs = flat.reshape(B, len(S), n_a)
        joint = self.belief[S][None, :, None] * xs  # (B, |S|, I)
        marg = joint.sum(axis=1)  # (B, I)
        post = np.broadcast_to(self.belief, (B, n_a, K)).copy()
        live = marg > ZERO_MARGINAL
        post_s = joint.transpose(0, 2, 1) / np.where(live, marg, 1.0)[:, :, None]
        post[:, :, S] = np.where(live[:, :, None], post_s, post[:, :, S])
        nxt = post @ self.matrix  # (B, I, K)
        idx, w = self.grid.locate(nxt.reshape(B * n_a, K))
        w = w * marg.reshape(B * n_a, 1)
        U = np.zeros((B, len(self.grid)))
        rows = np.repeat(np.arange(B), n_a * idx.shape[1])
        np.add.at(U, (rows, idx.ravel()), w.ravel())
        Z = np.zeros((B, K, n_a))
        Z[:, S, :] = joint
        return np.hstack([Z.reshape(B, K * n_a), U])

    def behavioral(self, flat) -> np.ndarray:
        """Full (n_states, n_actions) behavioral action; uniform off the support."""
        x = np.full((self.n_states, self.n_actions), 1.0 / self.n_actions)
        x[self.support] = np.asarray(flat, dtype=float).reshape(len(self.support), self.n_actions)
        return x

    def flat(self, behavioral) -> np.ndarray:
        return np.asarray(behavioral, dtype=float)[self.support].ravel()


def stage_kernel(spec: GameSpec, values: np.ndarray, alpha: float) -> np.ndarray:
    K, L, I, J = spec.shape
    g2 = spec.payoff.transpose(0, 2, 1, 3).reshape(K * I, L * J)
    top = np.hstack([alpha * g2, np.zeros((K * I, values.shape[1]))])
    bottom = np.hstack([np.zeros((values.shape[0], L * J)), (1.0 - alpha) * values])
    return np.vstack([top, bottom])


def solve_stage(
    spec: GameSpec,
    f: ValueTable,
    alpha: float,
    x_side: BeliefSide,
    y_side: BeliefSide,
    options: SolverOptions = SolverOptions(),
    kernel: np.ndarray | None = None,
    warm: tuple | None = None,
) -> SaddleResult:
    """Saddle point of the one-stage game at the beliefs held by the two sides."""
    if kernel is None:
        kernel = stage_kernel(spec, f.values, alpha)
    phi = FeatureObjective(x_side.features, y_side.features, kernel)
    wx, wy = warm if warm is not None else (None, None)
    return saddle_eval(
        phi,
        x_side.polytope,
        y_side.polytope,
        tol=options.tol,
        start_resolution=options.start_resolution,
        max_resolution=options.action_resolution,
        warm_x=wx,
        warm_y=wy,
        x_cache=x_side.cache,
        y_cache=y_side.cache,
    )


@dataclass
class StageStrategies:
    """Optimal behavioral actions per grid point, flat over the support."""

    x: list
    y: list


class StageSolver:
    """Backward recursion on a fixed grid, with per-belief caches shared across stages."""

    def __init__(
        self,
        spec: GameSpec,
        resolution: int,
        options: SolverOptions = SolverOptions(),
        x_constraint: ConstraintFactory | None = None,
        y_constraint: ConstraintFactory | None = None,
        lipschitz: float = 1.0,
    ):
        self.spec = spec
        self.options = options
        self.lipschitz = lipschitz
        self.grid_p = SimplexGrid(spec.n_k, resolution)
        self.grid_q = SimplexGrid(spec.n_l, resolution)
        self.x_sides = [BeliefSide(p, spec.n_i, self.grid_p, spec.M, x_constraint) for p in self.grid_p.points]
        self.y_sides = [BeliefSide(q, spec.n_j, self.grid_q, spec.N, y_constraint) for q in self.grid_q.points]
        self._warm: StageStrategies | None = None

    def zero_table(self) -> ValueTable:
        return ValueTable.constant(0.0, self.grid_p, self.grid_q, lipschitz=self.lipschitz)

    def step(self, f: ValueTable, alpha: float) -> ValueTable:
        if f.grid_p != self.grid_p or f.grid_q != self.grid_q:
            raise ValueError("continuation table lives on a different grid")
        kernel = stage_kernel(self.spec, f.values, alpha)
        nP, nQ = len(self.grid_p), len(self.grid_q)
        values = np.empty((nP, nQ))
        gaps = np.empty((nP, nQ))
        xs = [[None] * nQ for _ in range(nP)]
        ys = [[None] * nQ for _ in range(nP)]
        for a, xside in enumerate(self.x_sides):
            for b, yside in enumerate(self.y_sides):
                warm = None
                if self._warm is not None:
                    warm = (self._warm.x[a][b], self._warm.y[a][b])
                res = solve_stage(self.spec, f, alpha, xside, yside, self.options, kernel, warm)
                values[a, b] = res.value
                gaps[a, b] = res.gap
                xs[a][b] = res.x_star
                ys[a][b] = res.y_star
        self._warm = StageStrategies(xs, ys)
        interp = f.interpolation_error
        prev = float(f.meta.get("propagated_error", 0.0))
        propagated = float(gaps.max()) + (1.0 - alpha) * (prev + interp)
        return ValueTable(
            self.grid_p,
            self.grid_q,
            np.clip(values, -1.0, 1.0),
            lipschitz=self.lipschitz,
            error=gaps + self.lipschitz * (self.grid_p.mesh + self.grid_q.mesh),
            meta={"alpha": alpha, "max_gap": float(gaps.max()), "propagated_error": propagated},
        )


def shapley_step(
    spec: GameSpec,
    f: ValueTable,
    alpha: float,
    x_constraint: ConstraintFactory | None = None,
    y_constraint: ConstraintFactory | None = None,
    options: SolverOptions = SolverOptions(),
) -> ValueTable:
    """One application of the (optionally constrained) one-stage operator to ``f``.

    The result lives on ``f``'s grid and keeps its Lipschitz tag.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    solver = StageSolver(spec, f.grid_p.resolution, options, x_constraint, y_constraint, f.lipschitz)
    solver.grid_p, solver.grid_q = f.grid_p, f.grid_q
    return solver.step(f, alpha)


def run_recursion(solver: StageSolver, T: int, start: ValueTable | None = None, t0: int = 0) -> list[ValueTable]:
    """Tables v_{t0+1}..v_T, continuing from ``start`` = v_{t0} (zero when ``t0 = 0``)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    f = solver.zero_table() if start is None else start
    out = []
    for t in range(t0, T):
        f = solver.step(f, 1.0 / (t + 1))
        f.meta["T"] = t + 1
        out.append(f)
    return out


def compute_v(
    spec: GameSpec,
    T: int,
    resolution: int = 10,
    tol: float = 1e-3,
    options: SolverOptions | None = None,
) -> list[ValueTable]:
    """The T-stage values v_1..v_T on the product grid of the given resolution."""
    opts = replace(options or SolverOptions(), tol=tol)
    return run_recursion(StageSolver(spec, resolution, opts, lipschitz=1.0), T)


def stage_strategy(
    spec: GameSpec,
    f: ValueTable,
    alpha: float,
    p,
    q,
    x_constraint: ConstraintFactory | None = None,
    y_constraint: ConstraintFactory | None = None,
    options: SolverOptions = SolverOptions(),
) -> tuple[np.ndarray, np.ndarray, SaddleResult]:
    """Optimal behavioral actions of the stage game at an arbitrary (off-grid) belief pair."""
    xs = BeliefSide(p, spec.n_i, f.grid_p, spec.M, x_constraint)
    ys = BeliefSide(q, spec.n_j, f.grid_q, spec.N, y_constraint)
    res = solve_stage(spec, f, alpha, xs, ys, options)
    return xs.behavioral(res.x_star), ys.behavioral(res.y_star), res
