"""Linear programming and saddle points.

A dense two-phase tableau simplex serves every LP in the package (matrix
games, envelopes, transport).  ``saddle_eval`` approximates the saddle
value of a concave-convex objective over two polytopes by solving finite
matrix games on refining grids with a double-oracle loop, and certifies the
result by best responses on the next finer grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from .errors import Infeasible, LpFailure, ToleranceNotReached, Unbounded
from .tables import simplex_points

LP_TOL = 1e-9
_PIVOT_TOL = 1e-11


# ---------------------------------------------------------------------------
# dense simplex

def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T: np.ndarray, basis: np.ndarray, n_cols: int, max_iter: int) -> int:
    """Minimise over a canonical tableau in place.

    ``T`` has constraint rows followed by the reduced-cost row; the last
    column is the right-hand side.  Dantzig pricing, switching to Bland's
    rule after a run of degenerate pivots.
    """
    m = T.shape[0] - 1
    degenerate = 0
    bland = False
    for it in range(max_iter):
        rc = T[-1, :n_cols]
        if bland:
            neg = np.flatnonzero(rc < -LP_TOL)
            if len(neg) == 0:
                return it
            j = int(neg[0])
        else:
            j = int(np.argmin(rc))
            if rc[j] >= -LP_TOL:
                return it
        col = T[:m, j]
        pos = col > _PIVOT_TOL
        if not pos.any():
            raise Unbounded("objective is unbounded below")
        rhs = T[:m, -1]
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(rhs[pos], 0.0) / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + 1e-12 * (1.0 + rmin))
        r = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if rmin <= 1e-12 else 0
        if degenerate > 30:
            bland = True
        _pivot(T, r, j)
        basis[r] = j
    raise LpFailure(f"simplex did not terminate in {max_iter} iterations")


@dataclass
class LpResult:
    x: np.ndarray
    value: float
    basis: np.ndarray  # indices of basic structural variables
    iterations: int


def lp_solve(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    maximize: bool = False,
    max_iter: int | None = None,
) -> LpResult:
    """Optimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    Raises Infeasible or Unbounded; LpFailure on numerical breakdown.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if A_ub.shape != (len(b_ub), n) or A_eq.shape != (len(b_eq), n):
        raise ValueError("constraint shapes do not match the objective")
    cost = -c if maximize else c
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq
    n_slack = m_ub

    A = np.zeros((m, n + n_slack))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # rows whose own slack can start in the basis need no artificial
    basis = -np.ones(m, dtype=int)
    for r in range(m_ub):
        if not neg[r]:
            basis[r] = n + r
    art_rows = np.flatnonzero(basis < 0)
    n_art = len(art_rows)
    n_struct = n + n_slack
    T = np.zeros((m + 1, n_struct + n_art + 1))
    T[:m, :n_struct] = A
    T[:m, -1] = b
    for a, r in enumerate(art_rows):
        T[r, n_struct + a] = 1.0
        basis[r] = n_struct + a
    if max_iter is None:
        max_iter = 50 * (m + n_struct + n_art) + 100

    iters = 0
    if n_art:
        T[-1, n_struct:n_struct + n_art] = 1.0
        for r in art_rows:
            T[-1] -= T[r]
        iters += _run_simplex(T, basis, n_struct + n_art, max_iter)
        infeas = -T[-1, -1]
        if infeas > LP_TOL * (1.0 + np.abs(b).max(initial=0.0)):
            raise Infeasible(f"constraints are infeasible (phase-one residual {infeas:.3g})")
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n_struct:
                cand = np.flatnonzero(np.abs(T[r, :n_struct]) > 1e-9)
                if len(cand):
                    _pivot(T, r, int(cand[0]))
                    basis[r] = int(cand[0])
                else:
                    keep[r] = False  # redundant equality
        T = np.vstack([T[:m][keep], T[-1:]])
        T = np.hstack([T[:, :n_struct], T[:, -1:]])
        basis = basis[keep]
        m = len(basis)

    T[-1, :] = 0.0
    T[-1, :n] = cost
    for r in range(m):
        j = basis[r]
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[r]
    iters += _run_simplex(T, basis, n_struct, max_iter)

    x_full = np.zeros(n_struct)
    x_full[basis] = np.maximum(T[:m, -1], 0.0)
    x = x_full[:n]
    value = float(c @ x)
    return LpResult(x=x, value=value, basis=np.sort(basis[basis < n]), iterations=iters)


# ---------------------------------------------------------------------------
# matrix games

@dataclass
class SaddleResult:
    """Approximate saddle point with certified bounds ``lower <= value <= upper``."""

    value: float
    x_star: np.ndarray
    y_star: np.ndarray
    gap: float
    lower: float = np.nan
    upper: float = np.nan
    resolution: int = 0
    converged: bool = True
    history: list = field(default_factory=list)


def solve_matrix_game(A) -> SaddleResult:
    """Value and optimal mixed strategies of the matrix game ``A`` (row player maximises)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise LpFailure("payoff matrix has non-finite entries")
    m, n = A.shape
    shift = 1.0 - A.min()
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A + shift
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = 1.0
    T[-1, :n] = -1.0
    basis = np.arange(n, n + m)
    _run_simplex(T, basis, n + m, 50 * (n + m) + 100)

    y = np.zeros(n + m)
    y[basis] = np.maximum(T[:m, -1], 0.0)
    y = y[:n]
    u = np.maximum(T[-1, n:n + m], 0.0)
    if y.sum() <= 0 or u.sum() <= 0:
        raise LpFailure("degenerate matrix game solution")
    beta = y / y.sum()
    alpha = u / u.sum()
    upper = float(np.max(A @ beta))
    lower = float(np.min(alpha @ A))
    gap = upper - lower
    if gap > 1e-7 * (1.0 + np.abs(A).max()):
        raise LpFailure(f"matrix game duality gap {gap:.3g} too large")
    return SaddleResult(
        value=0.5 * (lower + upper),
        x_star=alpha,
        y_star=beta,
        gap=max(gap, 0.0),
        lower=lower,
        upper=upper,
    )


# ---------------------------------------------------------------------------
# polytopes

def _product_grid(blocks: tuple[int, ...], resolution: int) -> np.ndarray:
    parts = [simplex_points(b, resolution) for b in blocks]
    if not parts:
        return np.zeros((1, 0))
    idx = np.array(list(product(*[range(len(p)) for p in parts])), dtype=int)
    return np.hstack([p[idx[:, a]] for a, p in enumerate(parts)])


@dataclass(eq=False)
class Polytope:
    """Product of simplices, one per block, cut by extra linear constraints.

    Points are flat vectors concatenating the blocks.  ``retraction`` maps
    arbitrary product-of-simplex points onto the polytope (identity on it);
    without one, grid points are projected by an L1 projection LP.
    """

    blocks: tuple[int, ...]
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    retraction: Callable[[np.ndarray], np.ndarray] | None = None
    _grids: dict = field(default_factory=dict, repr=False)

    @classmethod
    def simplex(cls, size: int) -> "Polytope":
        return cls(blocks=(size,))

    @classmethod
    def product_of_simplices(cls, size: int, copies: int) -> "Polytope":
        return cls(blocks=(size,) * copies)

    @property
    def dim(self) -> int:
        return int(sum(self.blocks))

    @property
    def constrained(self) -> bool:
        return self.A_eq is not None or self.A_ub is not None

    def block_equalities(self) -> tuple[np.ndarray, np.ndarray]:
        rows = []
        start = 0
        for b in self.blocks:
            r = np.zeros(self.dim)
            r[start:start + b] = 1.0
            rows.append(r)
            start += b
        return np.array(rows).reshape(len(rows), self.dim), np.ones(len(rows))

    def _all_equalities(self):
        A, b = self.block_equalities()
        if self.A_eq is not None:
            A = np.vstack([A, self.A_eq])
            b = np.concatenate([b, self.b_eq])
        return A, b

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or np.any(x < -tol):
            return False
        A, b = self._all_equalities()
        if np.any(np.abs(A @ x - b) > tol):
            return False
        if self.A_ub is not None and np.any(self.A_ub @ x - self.b_ub > tol):
            return False
        return True

    def feasible_point(self) -> np.ndarray:
        """A point of the polytope (raises Infeasible when empty)."""
        A, b = self._all_equalities()
        res = lp_solve(np.zeros(self.dim), A_ub=self.A_ub, b_ub=self.b_ub, A_eq=A, b_eq=b)
        return res.x

    def is_feasible(self) -> bool:
        try:
            self.feasible_point()
        except Infeasible:
            return False
        return True

    def project(self, points) -> np.ndarray:
        """Map points of the product of simplices into the polytope."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.constrained:
            return points
        if self.retraction is not None:
            return self.retraction(points)
        A, b = self._all_equalities()
        d = self.dim
        out = np.empty_like(points)
        for a, x0 in enumerate(points):
            # min sum t  s.t.  -t <= x - x0 <= t  over variables (x, t)
            c = np.concatenate([np.zeros(d), np.ones(d)])
            I = np.eye(d)
            A_ub = np.block([[I, -I], [-I, -I]])
            b_ub = np.concatenate([x0, -x0])
            if self.A_ub is not None:
                A_ub = np.vstack([A_ub, np.hstack([self.A_ub, np.zeros((len(self.b_ub), d))])])
                b_ub = np.concatenate([b_ub, self.b_ub])
            A_eq = np.hstack([A, np.zeros((len(b), d))])
            out[a] = lp_solve(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b).x[:d]
        return out

    def grid(self, resolution: int) -> np.ndarray:
        """Vertex-plus-barycentric grid of the given resolution, mapped into the polytope.

        Grids are nested: every point of ``grid(m)`` belongs to ``grid(2m)``.
        """
        if resolution not in self._grids:
            pts = self.project(_product_grid(self.blocks, resolution))
            pts = np.unique(np.round(pts, 12), axis=0)
            pts.setflags(write=False)
            self._grids[resolution] = pts
        return self._grids[resolution]

    def grid_size(self, resolution: int) -> int:
        from math import comb

        size = 1
        for b in self.blocks:
            size *= comb(resolution + b - 1, b - 1)
        return size


# ---------------------------------------------------------------------------
# saddle points on refining grids

class FeatureObjective:
    """Objective of the form ``phi(x, y) = a(x) @ kernel @ b(y)``.

    The feature maps may be nonlinear; the bilinear kernel lets best
    responses against mixtures be computed as one matrix-vector product.
    ``x_features`` and ``y_features`` map a batch of points to a batch of
    feature vectors.
    """

    def __init__(self, x_features, y_features, kernel):
        self.x_features = x_features
        self.y_features = y_features
        self.kernel = np.asarray(kernel, dtype=float)

    def __call__(self, xs, ys) -> np.ndarray:
        xs = np.atleast_2d(xs)
        ys = np.atleast_2d(ys)
        return self.x_features(xs) @ self.kernel @ self.y_features(ys).T


class _Side:
    """Grid points of one player together with cached features."""

    def __init__(self, polytope: Polytope, feature_map, cache: dict | None):
        self.polytope = polytope
        self.feature_map = feature_map
        self.cache = {} if cache is None else cache

    def grid(self, resolution: int):
        pts = self.polytope.grid(resolution)
        if self.feature_map is None:
            return pts, None
        if resolution not in self.cache:
            self.cache[resolution] = self.feature_map(pts)
        return pts, self.cache[resolution]

    def features(self, pts):
        return None if self.feature_map is None else self.feature_map(np.atleast_2d(pts))


class _Evaluator:
    def __init__(self, phi):
        self.phi = phi
        self.featured = isinstance(phi, FeatureObjective)

    def matrix(self, xp, xf, yp, yf) -> np.ndarray:
        if self.featured:
            return xf @ self.phi.kernel @ yf.T
        return np.asarray(self.phi(xp, yp), dtype=float).reshape(len(xp), len(yp))

    def against_y_mix(self, xp, xf, yp, yf, beta) -> np.ndarray:
        """Values of every x against the y-mixture ``beta`` of the points ``yp``."""
        if self.featured:
            return xf @ (self.phi.kernel @ (yf.T @ beta))
        return self.matrix(xp, xf, yp, yf) @ beta

    def against_x_mix(self, xp, xf, yp, yf, alpha) -> np.ndarray:
        if self.featured:
            return yf @ (self.phi.kernel.T @ (xf.T @ alpha))
        return alpha @ self.matrix(xp, xf, yp, yf)


def _double_oracle(ev: _Evaluator, gx, fx, gy, fy, sx: list, sy: list, max_iter: int):
    for _ in range(max_iter):
        sub = ev.matrix(gx[sx], None if fx is None else fx[sx], gy[sy], None if fy is None else fy[sy])
        game = solve_matrix_game(sub)
        vx = ev.against_y_mix(gx, fx, gy[sy], None if fy is None else fy[sy], game.y_star)
        vy = ev.against_x_mix(gx[sx], None if fx is None else fx[sx], gy, fy, game.x_star)
        ix, iy = int(np.argmax(vx)), int(np.argmin(vy))
        grown = False
        if vx[ix] > game.value + 1e-10 and ix not in sx:
            sx.append(ix)
            grown = True
        if vy[iy] < game.value - 1e-10 and iy not in sy:
            sy.append(iy)
            grown = True
        if not grown:
            break
    return game, sx, sy


def _levels(start: int, cap: int) -> list[int]:
    out = []
    m = max(1, start)
    while m < cap:
        out.append(m)
        m *= 2
    out.append(cap)
    return out


def saddle_eval(
    phi,
    X: Polytope,
    Y: Polytope,
    tol: float = 1e-6,
    start_resolution: int = 2,
    max_resolution: int = 16,
    warm_x=None,
    warm_y=None,
    strict: bool = False,
    x_cache: dict | None = None,
    y_cache: dict | None = None,
    max_oracle_iter: int = 200,
) -> SaddleResult:
    """Saddle value of ``max_{x in X} min_{y in Y} phi(x, y)``.

    ``phi`` is either a callable mapping point batches ``(xs, ys)`` to the
    matrix of values, or a :class:`FeatureObjective`.  At each resolution the
    finite game on the grid is solved by double oracle; the mixtures of the
    optimal grid strategies give candidate points ``x*`` and ``y*``, which are
    certified by best responses on the grid of twice the resolution.  The
    reported ``lower``/``upper`` are the best certified bounds over all
    candidates, so ``gap`` never grows as the resolution doubles.

    ``x_cache``/``y_cache`` keep grid features between calls on the same
    polytopes.  With ``strict`` a miss of ``tol`` raises ToleranceNotReached
    carrying the best result.
    """
    ev = _Evaluator(phi)
    fmap_x = phi.x_features if ev.featured else None
    fmap_y = phi.y_features if ev.featured else None
    sx_side = _Side(X, fmap_x, x_cache)
    sy_side = _Side(Y, fmap_y, y_cache)

    cand_x: list[np.ndarray] = []
    cand_y: list[np.ndarray] = []
    if warm_x is not None:
        cand_x.append(np.asarray(warm_x, dtype=float))
    if warm_y is not None:
        cand_y.append(np.asarray(warm_y, dtype=float))
    feat_x = _CandidateFeatures(sx_side, cand_x)
    feat_y = _CandidateFeatures(sy_side, cand_y)

    levels = _levels(start_resolution, max_resolution)
    level_marks = []
    for m in levels:
        gx, fx = sx_side.grid(m)
        gy, fy = sy_side.grid(m)
        seeds_x = [int(np.argmin(np.abs(gx - c).sum(axis=1))) for c in cand_x] or [0]
        seeds_y = [int(np.argmin(np.abs(gy - c).sum(axis=1))) for c in cand_y] or [0]
        sx_idx = list(dict.fromkeys(seeds_x))
        sy_idx = list(dict.fromkeys(seeds_y))
        game, sx_idx, sy_idx = _double_oracle(ev, gx, fx, gy, fy, sx_idx, sy_idx, max_oracle_iter)
        cand_x.append(game.x_star @ gx[sx_idx])
        cand_y.append(game.y_star @ gy[sy_idx])
        level_marks.append(len(cand_x))

        cert = min(2 * m, 2 * max_resolution)
        cx_set = (*sx_side.grid(cert), *feat_x.get())
        cy_set = (*sy_side.grid(cert), *feat_y.get())
        lows, ups = _candidate_values(ev, cx_set, cy_set)
        if ups.min() - lows.max() <= tol:
            break

    ix = int(np.argmax(lows))
    iy = int(np.argmin(ups))
    lower, upper = float(lows[ix]), float(ups[iy])
    n_warm_x = len(cand_x) - len(level_marks)
    n_warm_y = len(cand_y) - len(level_marks)
    history = [
        max(float(ups[: n_warm_y + k + 1].min()) - float(lows[: n_warm_x + k + 1].max()), 0.0)
        for k in range(len(level_marks))
    ]
    gap = max(upper - lower, 0.0)
    result = SaddleResult(
        value=0.5 * (lower + upper),
        x_star=cand_x[ix],
        y_star=cand_y[iy],
        gap=gap,
        lower=lower,
        upper=upper,
        resolution=m,
        converged=gap <= tol,
        history=history,
    )
    if strict and not result.converged:
        raise ToleranceNotReached(f"saddle gap {gap:.3g} exceeds {tol:.3g} at resolution {m}", result)
    return result


class _CandidateFeatures:
    """Candidate points with features computed once each."""

    def __init__(self, side: _Side, points: list):
        self.side = side
        self.points = points
        self.feats: list = []

    def get(self):
        new = self.points[len(self.feats):]
        if new and self.side.feature_map is not None:
            self.feats.extend(self.side.features(np.array(new)))
        pts = np.array(self.points)
        return pts, (np.array(self.feats) if self.side.feature_map is not None else None)


def _candidate_values(ev: _Evaluator, cx_set, cy_set):
    """Guaranteed values of the candidates against the certification sets.

    Each certification set is the refinement grid plus all candidates of
    the other player, so ``max(lows) <= min(ups)`` always holds.
    """
    gxp, gxf, cxp, cxf = cx_set
    gyp, gyf, cyp, cyf = cy_set
    lows = np.minimum(
        ev.matrix(cxp, cxf, gyp, gyf).min(axis=1),
        ev.matrix(cxp, cxf, cyp, cyf).min(axis=1),
    )
    ups = np.maximum(
        ev.matrix(gxp, gxf, cyp, cyf).max(axis=0),
        ev.matrix(cxp, cxf, cyp, cyf).max(axis=0),
    )
    return lows, ups
