"""Transport of finite-support belief measures.

Closed-form proportional transport inside a simplex, the affine map
between fibers of fixed class masses, their combination on measures with
common class masses, the L1 Wasserstein distance and the convex order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadCombination, FiberMismatch, Infeasible, NotInH
from .markov_core import ChainAnalysis, class_masses, lambda_decompose, s_value
from .minimax import lp_solve

COMBINATION_TOL = 1e-10


@dataclass
class FiniteMeasure:
    """Probability on beliefs with finitely many atoms."""

    weights: np.ndarray
    atoms: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if len(self.weights) != len(self.atoms):
            raise BadCombination("weights and atoms differ in number")
        if np.any(self.weights < -COMBINATION_TOL) or abs(self.weights.sum() - 1.0) > COMBINATION_TOL:
            raise BadCombination(f"weights {self.weights.tolist()} are not a probability vector")

    @classmethod
    def dirac(cls, p) -> "FiniteMeasure":
        return cls([1.0], np.asarray(p, dtype=float)[None, :])

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def __len__(self) -> int:
        return len(self.weights)


def laraki_transport(weights, sources, target, p=None) -> np.ndarray:
    """Move each source so the mixture lands on ``target`` at total L1 cost ``||p - target||``.

    Every source sheds each deficit coordinate in proportion to its own
    holding of it, and redistributes what it shed over the surplus
    coordinates in proportion to the global surplus.  ``p`` defaults to the
    mixture of the sources; when given it must equal that mixture.
    """
    w = np.asarray(weights, dtype=float)
    S = np.atleast_2d(np.asarray(sources, dtype=float))
    target = np.asarray(target, dtype=float)
    if len(w) != len(S) or np.any(w < -COMBINATION_TOL) or abs(w.sum() - 1.0) > COMBINATION_TOL:
        raise BadCombination("weights must be a probability vector matching the sources")
    mix = w @ S
    if p is not None and np.abs(mix - np.asarray(p, dtype=float)).sum() > COMBINATION_TOL:
        raise BadCombination("the weighted sources do not average to p")
    d = target - mix
    delta = 0.5 * np.abs(d).sum()
    if delta <= COMBINATION_TOL:
        return S.copy()
    deficit = d < 0
    surplus = d > 0
    shed_rate = np.zeros_like(d)
    shed_rate[deficit] = -d[deficit] / mix[deficit]
    shed = S * shed_rate  # per source and coordinate
    out = S - shed
    e = shed.sum(axis=1)
    out[:, surplus] += e[:, None] * (d[surplus] / delta)[None, :]
    return out


def affine_fiber_map(p, p_star_from, p_star_to, analysis: ChainAnalysis) -> np.ndarray:
    """``L(p) = sum_r p_star_to^r p_{|r}``: keep the within-class laws, reset the class masses."""
    dec = lambda_decompose(p, analysis)
    if np.abs(dec.lam - np.asarray(p_star_from, dtype=float)).sum() > COMBINATION_TOL:
        raise FiberMismatch(f"p has class masses {dec.lam.tolist()}, expected {list(p_star_from)}")
    return np.asarray(p_star_to, dtype=float) @ dec.conditionals


def h_transport(mu: FiniteMeasure, target, analysis: ChainAnalysis) -> FiniteMeasure:
    """Carry a measure of beliefs with common class masses onto ``target``.

    Atoms are first moved by the affine fiber map, then per class by the
    proportional transport; weights are preserved and
    ``sum_n w_n S(p_n, p'_n) = S(p, target)``.
    """
    target = np.asarray(target, dtype=float)
    p = mu.mean
    lam = class_masses(p, analysis)
    atom_lams = class_masses(mu.atoms, analysis)
    if np.abs(atom_lams - lam[None, :]).max() > 1e-9:
        raise NotInH("atoms do not share the class masses of their mean")
    lam_t = class_masses(target, analysis)
    moved = np.array([affine_fiber_map(a, lam, lam_t, analysis) for a in mu.atoms])
    decs = [lambda_decompose(a, analysis) for a in moved]
    target_cond = lambda_decompose(target, analysis).conditionals
    out = np.zeros_like(moved)
    for r in range(analysis.n_classes):
        if lam_t[r] <= 0:
            continue
        sources = np.array([d.conditionals[r] for d in decs])
        out += lam_t[r] * laraki_transport(mu.weights, sources, target_cond[r])
    return FiniteMeasure(mu.weights.copy(), out)


def in_h(mu: FiniteMeasure, p, analysis: ChainAnalysis, tol: float = 1e-9) -> bool:
    """Mean ``p`` and every atom carrying the class masses of ``p``."""
    p = np.asarray(p, dtype=float)
    if np.abs(mu.mean - p).sum() > tol:
        return False
    lam = class_masses(p, analysis)
    return bool(np.abs(class_masses(mu.atoms, analysis) - lam[None, :]).max() <= tol)


def s_transport_cost(mu: FiniteMeasure, nu: FiniteMeasure, analysis: ChainAnalysis) -> float:
    """``sum_n w_n S(p_n, p'_n)`` for two measures with paired atoms."""
    return float(sum(w * s_value(a, b, analysis) for w, a, b in zip(mu.weights, mu.atoms, nu.atoms)))


def _transport_constraints(mu: FiniteMeasure, nu: FiniteMeasure):
    n, m = len(mu), len(nu)
    rows = np.zeros((n + m, n * m))
    for a in range(n):
        rows[a, a * m:(a + 1) * m] = 1.0
    for b in range(m):
        rows[n + b, b::m] = 1.0
    return rows, np.concatenate([mu.weights, nu.weights])


def wasserstein_l1(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    """Optimal transport cost between finite measures with ground cost ``||u - v||_1``."""
    cost = np.abs(mu.atoms[:, None, :] - nu.atoms[None, :, :]).sum(axis=2).ravel()
    A, b = _transport_constraints(mu, nu)
    return max(lp_solve(cost, A_eq=A, b_eq=b).value, 0.0)


def convex_order_check(mu: FiniteMeasure, nu: FiniteMeasure, tol: float = 1e-9) -> bool:
    """Whether ``mu <= nu`` in the convex order (``nu`` is a mean-preserving spread of ``mu``).

    Feasibility of a transport plan whose rows average back to the atoms of ``mu``.
    """
    if np.abs(mu.mean - nu.mean).sum() > max(tol, COMBINATION_TOL):
        return False
    n, m = len(mu), len(nu)
    A, b = _transport_constraints(mu, nu)
    dim = mu.atoms.shape[1]
    bary = np.zeros((n * dim, n * m))
    rhs = np.zeros(n * dim)
    for a in range(n):
        for k in range(dim):
            bary[a * dim + k, a * m:(a + 1) * m] = nu.atoms[:, k]
            rhs[a * dim + k] = mu.weights[a] * mu.atoms[a, k]
    try:
        lp_solve(np.zeros(n * m), A_eq=np.vstack([A, bary]), b_eq=np.concatenate([b, rhs]))
    except Infeasible:
        return False
    return True
