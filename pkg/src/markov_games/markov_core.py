"""Finite Markov chain analysis: recurrence classes, invariant measures,
the limit projection ``B``, class-mass decomposition of beliefs and the
quasi-metric ``S`` used for the nonrevealing regularity bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotStochastic, TransientState

STOCHASTIC_TOL = 1e-12
# Class masses at or below this are treated as zero in ``s_value``.
POSITIVE_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class ChainAnalysis:
    """Recurrence structure of a stochastic matrix.

    ``classes`` lists the closed communicating classes in order of their
    smallest state; ``class_of[k]`` is the class index of state ``k`` or -1
    for a transient state. ``invariant_measures[r]`` is the stationary law of
    class ``r`` embedded in the full state space.
    """

    matrix: np.ndarray
    classes: tuple[tuple[int, ...], ...]
    invariant_measures: np.ndarray
    limit_matrix: np.ndarray
    period: int
    class_periods: tuple[int, ...]
    transient: tuple[int, ...]
    class_of: np.ndarray

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def has_transient(self) -> bool:
        return bool(self.transient)

    @property
    def membership(self) -> np.ndarray:
        """0/1 matrix of shape (n_states, n_classes)."""
        out = np.zeros((self.n_states, self.n_classes))
        for r, cls in enumerate(self.classes):
            out[list(cls), r] = 1.0
        return out

    def lift(self, class_belief) -> np.ndarray:
        """The invariant belief with the given class masses."""
        return np.asarray(class_belief, dtype=float) @ self.invariant_measures


def check_stochastic(M, name: str = "matrix") -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise NotStochastic(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotStochastic(f"{name} has non-finite entries")
    bad = np.argwhere((M < -STOCHASTIC_TOL) | (M > 1 + STOCHASTIC_TOL))
    if len(bad):
        k, j = bad[0]
        raise NotStochastic(f"{name}[{k}][{j}] = {M[k, j]} is not a probability")
    sums = M.sum(axis=1)
    off = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)
    if len(off):
        k = off[0]
        raise NotStochastic(f"{name} row {k} sums to {float(sums[k])!r}, not 1")
    return np.clip(M, 0.0, 1.0)


def _invariant_measure(sub: np.ndarray) -> np.ndarray:
    n = sub.shape[0]
    A = sub.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    if np.any(pi < -1e-12):
        raise NotStochastic("invariant measure has negative mass; class is not closed")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _class_period(M: np.ndarray, cls: tuple[int, ...]) -> int:
    # BFS levels from the first state; the period is the gcd of
    # level[u] + 1 - level[v] over all edges inside the class.
    members = set(cls)
    level = {cls[0]: 0}
    frontier = [cls[0]]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(M[u] > 0):
                v = int(v)
                if v in members and v not in level:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in cls:
        for v in np.flatnonzero(M[u] > 0):
            v = int(v)
            if v in members:
                g = math.gcd(g, level[u] + 1 - level[v])
    return max(g, 1)


def analyze_chain(M, allow_transient: bool = False) -> ChainAnalysis:
    """Recurrence classes, invariant measures, limit matrix and period of ``M``.

    Raises TransientState when a state lies outside every closed class and
    ``allow_transient`` is false.  With transient states allowed, row ``k`` of
    the limit matrix is the absorption-weighted mixture of class invariant
    measures (the Cesaro limit of ``M^t``).
    """
    M = check_stochastic(M)
    n = M.shape[0]
    adj = csr_matrix((M > 0).astype(float))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")

    comps: dict[int, list[int]] = {}
    for k, c in enumerate(labels):
        comps.setdefault(int(c), []).append(k)
    closed = []
    for members in comps.values():
        outside = np.setdiff1d(np.arange(n), members)
        if not np.any(M[np.ix_(members, outside)] > 0):
            closed.append(tuple(members))
    closed.sort(key=lambda c: c[0])
    in_class = {k for c in closed for k in c}
    transient = tuple(k for k in range(n) if k not in in_class)
    if transient and not allow_transient:
        raise TransientState(f"states {list(transient)} are transient")

    class_of = -np.ones(n, dtype=int)
    inv = np.zeros((len(closed), n))
    for r, cls in enumerate(closed):
        class_of[list(cls)] = r
        idx = list(cls)
        inv[r, idx] = _invariant_measure(M[np.ix_(idx, idx)])

    B = np.zeros((n, n))
    for k in range(n):
        if class_of[k] >= 0:
            B[k] = inv[class_of[k]]
    if transient:
        tr = list(transient)
        Q = M[np.ix_(tr, tr)]
        absorb = np.zeros((len(tr), len(closed)))
        for r, cls in enumerate(closed):
            absorb[:, r] = M[np.ix_(tr, list(cls))].sum(axis=1)
        H = np.linalg.solve(np.eye(len(tr)) - Q, absorb)
        B[tr] = H @ inv

    periods = tuple(_class_period(M, cls) for cls in closed)
    period = reduce(lambda a, b: a * b // math.gcd(a, b), periods, 1)
    return ChainAnalysis(
        matrix=M,
        classes=tuple(closed),
        invariant_measures=inv,
        limit_matrix=B,
        period=int(period),
        class_periods=periods,
        transient=transient,
        class_of=class_of,
    )


def aperiodic_lift(analysis: ChainAnalysis) -> np.ndarray:
    """``M^T0`` where ``T0`` is the lcm of the class periods."""
    return np.linalg.matrix_power(analysis.matrix, analysis.period)


@dataclass(frozen=True, eq=False)
class LambdaDecomposition:
    lam: np.ndarray
    conditionals: np.ndarray  # (n_classes, n_states)

    def recombine(self) -> np.ndarray:
        return self.lam @ self.conditionals


def class_masses(p, analysis: ChainAnalysis) -> np.ndarray:
    """Mass that ``p`` (or each row of a batch) puts on every recurrence class."""
    return np.asarray(p, dtype=float) @ analysis.membership


def lambda_decompose(p, analysis: ChainAnalysis) -> LambdaDecomposition:
    p = np.asarray(p, dtype=float)
    lam = class_masses(p, analysis)
    cond = np.zeros((analysis.n_classes, analysis.n_states))
    for r, cls in enumerate(analysis.classes):
        idx = list(cls)
        if lam[r] > 0:
            cond[r, idx] = p[idx] / lam[r]
        else:
            cond[r] = analysis.invariant_measures[r]
    return LambdaDecomposition(lam=lam, conditionals=cond)


def s_value(p, p2, analysis: ChainAnalysis) -> float:
    """The asymmetric quasi-metric S(p, p2).

    Class-mass distance plus the conditional distances inside classes that
    both beliefs charge, weighted by the mass ``p2`` puts on them.
    """
    if analysis.has_transient:
        raise TransientState("S is only defined for recurrent chains")
    a = lambda_decompose(p, analysis)
    b = lambda_decompose(p2, analysis)
    total = float(np.abs(a.lam - b.lam).sum())
    for r in range(analysis.n_classes):
        if a.lam[r] * b.lam[r] > POSITIVE_MASS:
            total += b.lam[r] * float(np.abs(a.conditionals[r] - b.conditionals[r]).sum())
    return total


def is_balanced(f, chain_k: ChainAnalysis, chain_l: ChainAnalysis, tol: float = 1e-8):
    """Check ``f(p, q) == f(pM, qN)`` at every grid point of the table ``f``.

    Returns ``(balanced, max_residual)``; off-grid images are interpolated.
    """
    P = f.grid_p.points
    Q = f.grid_q.points
    shifted = f.evaluate_product(P @ chain_k.matrix, Q @ chain_l.matrix)
    residual = float(np.max(np.abs(shifted - f.values))) if f.values.size else 0.0
    return residual <= tol, residual


def fiber_grid(p_star, resolution: int, analysis: ChainAnalysis) -> list[np.ndarray]:
    """Beliefs with class masses ``p_star``, gridded inside each class simplex."""
    from .tables import simplex_points

    p_star = np.asarray(p_star, dtype=float)
    if resolution <= 0:
        return [analysis.lift(p_star)]
    per_class = []
    for r, cls in enumerate(analysis.classes):
        if p_star[r] <= 0:
            continue
        local = simplex_points(len(cls), resolution)
        blocks = np.zeros((len(local), analysis.n_states))
        blocks[:, list(cls)] = p_star[r] * local
        per_class.append(blocks)
    out = [np.zeros(analysis.n_states)]
    for blocks in per_class:
        out = [base + b for base in out for b in blocks]
    return out
