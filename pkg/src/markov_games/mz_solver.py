"""Concavification, convexification and the Mertens-Zamir fixed point on grid tables.

Envelopes are computed by one LP per grid point whose variables are the
weights on the grid atoms: ``cav f(p) = max { sum_m l_m f(p_m) : sum_m l_m p_m = p }``.
An optimal basic solution has at most ``K`` atoms, which doubles as the
constructive splitting used by the block strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotConverged, PreconditionViolated
from .markov_core import ChainAnalysis, class_masses
from .minimax import lp_solve
from .tables import SimplexGrid, ValueTable

ATOM_WEIGHT = 1e-12


@dataclass
class Splitting:
    """Convex decomposition ``sum_m weights[m] * atoms[m]`` of a belief."""

    weights: np.ndarray
    atoms: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def __len__(self) -> int:
        return len(self.weights)


def _upper_hull_1d(t: np.ndarray, v: np.ndarray, targets: np.ndarray):
    """Concave envelope of points (t, v) on a line, at each target.

    Returns values and, per target, the two bracketing hull atoms with
    their weights.
    """
    hull: list[int] = []
    for k in range(len(t)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or below the chord a -> k
            if (v[b] - v[a]) * (t[k] - t[a]) <= (v[k] - v[a]) * (t[b] - t[a]) + 1e-15:
                hull.pop()
            else:
                break
        hull.append(k)
    ht = t[hull]
    pos = np.clip(np.searchsorted(ht, targets, side="right") - 1, 0, max(len(hull) - 2, 0))
    out = np.empty(len(targets))
    atoms = []
    for n, (x, s) in enumerate(zip(targets, pos)):
        if len(hull) == 1:
            out[n] = v[hull[0]]
            atoms.append(([hull[0]], [1.0]))
            continue
        a, b = hull[s], hull[s + 1]
        w = (x - t[a]) / (t[b] - t[a])
        w = min(max(w, 0.0), 1.0)
        out[n] = (1.0 - w) * v[a] + w * v[b]
        atoms.append(([a, b], [1.0 - w, w]))
    return out, atoms


def concave_envelope_at(points: np.ndarray, values: np.ndarray, target) -> tuple[float, Splitting]:
    """Concave envelope of the finite function ``points -> values`` at ``target``.

    Solved as an LP over the atom weights; the returned splitting is read
    back from the optimal basis (at most ``dim`` atoms).
    """
    target = np.asarray(target, dtype=float)
    dim = points.shape[1]
    if dim == 1:
        return float(values.max()), Splitting([1.0], target[None, :])
    res = lp_solve(values, A_eq=points.T, b_eq=target, maximize=True)
    keep = np.flatnonzero(res.x > ATOM_WEIGHT)
    w = res.x[keep]
    return float(res.value), Splitting(w / w.sum(), points[keep])


def _cav_columns(points: np.ndarray, values: np.ndarray, grid: SimplexGrid) -> np.ndarray:
    """Concave envelope in the first variable, column by column, at the grid points."""
    out = np.empty_like(values)
    dim = points.shape[1]
    if dim == 1:
        return values.copy()
    if dim == 2:
        t = points[:, 1]
        order = np.argsort(t, kind="stable")
        for b in range(values.shape[1]):
            env, _ = _upper_hull_1d(t[order], values[order, b], t)
            out[:, b] = env
        return out
    for b in range(values.shape[1]):
        for a, p in enumerate(points):
            out[a, b], _ = concave_envelope_at(points, values[:, b], p)
    return out


def cav_i(f: ValueTable, q=None):
    """Concavification in the first (Player 1) variable.

    Returns the full table, or with ``q`` given the slice ``p -> cav f(p, q)``
    on the p-grid (``q`` off the grid is interpolated).
    """
    P = f.grid_p.points
    if q is None:
        vals = _cav_columns(P, f.values, f.grid_p)
        return f.with_values(np.maximum(vals, f.values), error=f.error.copy())
    col = f.evaluate_product(P, np.atleast_2d(q))
    return np.maximum(_cav_columns(P, col, f.grid_p)[:, 0], col[:, 0])


def vex_ii(f: ValueTable, p=None):
    """Convexification in the second (Player 2) variable: ``-cav_II(-f)``."""
    Q = f.grid_q.points
    if p is None:
        vals = -_cav_columns(Q, -f.values.T, f.grid_q).T
        return f.with_values(np.minimum(vals, f.values), error=f.error.copy())
    row = f.evaluate_product(np.atleast_2d(p), Q)
    return np.minimum(-_cav_columns(Q, -row.T, f.grid_q)[:, 0], row[0])


def _max(w: ValueTable, f: ValueTable) -> ValueTable:
    return w.with_values(np.maximum(w.values, f.values))


def _min(w: ValueTable, f: ValueTable) -> ValueTable:
    return w.with_values(np.minimum(w.values, f.values))


@dataclass
class MzResult:
    w: ValueTable
    residual_vex: float  # sup |w - vex_II Max(w, f)|
    residual_cav: float  # sup |w - cav_I Min(w, f)|
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def mz_residuals(w: ValueTable, f: ValueTable) -> tuple[float, float]:
    r_vex = w.sup_distance(vex_ii(_max(w, f)))
    r_cav = w.sup_distance(cav_i(_min(w, f)))
    return r_vex, r_cav


def mz_fixed_point(f, tol: float = 1e-3, max_iter: int = 500, w0=None, strict: bool = True) -> MzResult:
    """Solve ``w = vex_II Max(w, f)`` and ``w = cav_I Min(w, f)`` by alternating sweeps.

    ``f`` is a table or an object with a ``table`` attribute (a balanced
    limit on the class simplices, where the iteration then runs).  ``w0`` is
    the starting table or a constant; default ``f``.  Stops when both
    residuals are at most ``tol``; otherwise raises NotConverged carrying the
    last iterate (or returns it when ``strict`` is false).
    """
    table = f.table if hasattr(f, "table") and not isinstance(f, ValueTable) else f
    if w0 is None:
        w = table.with_values(table.values.copy())
    elif isinstance(w0, ValueTable):
        w = w0
    else:
        w = table.with_values(np.full_like(table.values, float(w0)))
    history = []
    r_vex = r_cav = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = vex_ii(_max(w, table))
        w = cav_i(_min(w, table))
        r_vex, r_cav = mz_residuals(w, table)
        history.append((r_vex, r_cav))
        if max(r_vex, r_cav) <= tol:
            break
    converged = max(r_vex, r_cav) <= tol
    w.meta.update({"mz_iterations": it, "residual_vex": r_vex, "residual_cav": r_cav})
    result = MzResult(w, float(r_vex), float(r_cav), it, converged, history)
    if strict and not converged:
        raise NotConverged(f"MZ residuals ({r_vex:.3g}, {r_cav:.3g}) above {tol:.3g} after {it} sweeps", result)
    return result


def balanced_lift(w_star: ValueTable, chain_k: ChainAnalysis, chain_l: ChainAnalysis, grid_p: SimplexGrid, grid_q: SimplexGrid) -> ValueTable:
    """The table ``w(p, q) = w_star(lambda(p), lambda(q))`` on the given full grids."""
    lam_p = class_masses(grid_p.points, chain_k)
    lam_q = class_masses(grid_q.points, chain_l)
    vals = w_star.evaluate_product(lam_p, lam_q)
    return ValueTable(grid_p, grid_q, vals, lipschitz=w_star.lipschitz, meta={"lifted": True})


def membership_c_plus(w: ValueTable, f: ValueTable, tol: float = 1e-6) -> tuple[bool, float]:
    """w is I-concave and ``w >= vex_II Max(w, f)``; returns the flag and worst residual."""
    concavity = float(np.max(cav_i(w).values - w.values))
    dominance = float(np.max(vex_ii(_max(w, f)).values - w.values))
    worst = max(concavity, dominance)
    return worst <= tol, worst


def membership_c_minus(w: ValueTable, f: ValueTable, tol: float = 1e-6) -> tuple[bool, float]:
    """w is II-convex and ``w <= cav_I Min(w, f)``; returns the flag and worst residual."""
    convexity = float(np.max(w.values - vex_ii(w).values))
    dominance = float(np.max(w.values - cav_i(_min(w, f)).values))
    worst = max(convexity, dominance)
    return worst <= tol, worst


def splitting_for_cav(w: ValueTable, f: ValueTable, p, q, tol: float = 1e-6) -> Splitting:
    """Split ``p`` into at most K grid atoms where ``w <= f``, preserving ``w`` on average.

    Requires ``w(p, q) <= cav_I Min(w, f)(p, q) + tol``; raises
    PreconditionViolated otherwise.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w_pq = w.evaluate(p, q)
    if w_pq <= f.evaluate(p, q) + tol:
        return Splitting([1.0], p[None, :])
    P = w.grid_p.points
    h = np.minimum(w.evaluate_product(P, q[None, :]), f.evaluate_product(P, q[None, :]))[:, 0]
    value, split = concave_envelope_at(P, h, p)
    if w_pq > value + tol:
        raise PreconditionViolated(f"w(p,q) = {w_pq:.6g} exceeds cav Min(w,f)(p,q) = {value:.6g}")
    return split
