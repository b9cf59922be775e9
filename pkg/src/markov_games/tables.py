"""Barycentric grids on simplices, piecewise-linear interpolation on the
Kuhn (Freudenthal) triangulation, and value tables on products of two
simplices."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np


@lru_cache(maxsize=None)
def _cumulative_vectors(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(combinations_with_replacement(range(n + 1), dim - 1)), dtype=int)


def simplex_points(dim: int, n: int) -> np.ndarray:
    """All points of the simplex in R^dim whose coordinates are multiples of 1/n."""
    if dim == 1:
        return np.ones((1, 1))
    c = _cumulative_vectors(dim, n)
    counts = np.diff(np.hstack([np.zeros((len(c), 1), dtype=int), c, np.full((len(c), 1), n)]), axis=1)
    return counts / n


class SimplexGrid:
    """Barycentric grid of resolution ``n`` on the simplex over ``dim`` states."""

    def __init__(self, dim: int, resolution: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        if dim > 1 and resolution < 1:
            raise ValueError("resolution must be positive")
        self.dim = dim
        self.resolution = resolution if dim > 1 else 0
        self.points = simplex_points(dim, resolution)
        self.points.setflags(write=False)
        if dim > 1:
            c = _cumulative_vectors(dim, resolution)
            shape = (resolution + 1,) * (dim - 1)
            self._index = -np.ones(shape, dtype=int)
            self._index[tuple(c.T)] = np.arange(len(c))
            self._shape = shape

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, SimplexGrid) and (self.dim, self.resolution) == (other.dim, other.resolution)

    def __hash__(self) -> int:
        return hash((self.dim, self.resolution))

    def __repr__(self) -> str:
        return f"SimplexGrid(dim={self.dim}, resolution={self.resolution})"

    @property
    def mesh(self) -> float:
        """Interpolation scale 1/n (zero for the one-point simplex)."""
        return 0.0 if self.dim == 1 else 1.0 / self.resolution

    def locate(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Vertex indices and barycentric weights of the Kuhn simplex holding each row of X.

        Returns arrays of shape (B, dim).  Rows of X are clipped to be
        non-negative; they are assumed to sum to one.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B = X.shape[0]
        d = self.dim
        if d == 1:
            return np.zeros((B, 1), dtype=int), np.ones((B, 1))
        n = self.resolution
        X = np.clip(X, 0.0, None)
        c = np.clip(n * np.cumsum(X[:, : d - 1], axis=1), 0.0, n)
        c = np.maximum.accumulate(c, axis=1)
        base = np.minimum(np.floor(c), n - 1).astype(int)
        frac = c - base
        # Descending fraction; equal fractions add the higher coordinate first
        # so every vertex stays a nondecreasing cumulative vector.
        ranks = np.broadcast_to(np.arange(d - 1), frac.shape)
        order = np.lexsort((-ranks, -frac), axis=-1)
        sorted_frac = np.take_along_axis(frac, order, axis=1)
        weights = np.empty((B, d))
        weights[:, 0] = 1.0 - sorted_frac[:, 0]
        weights[:, 1:-1] = sorted_frac[:, :-1] - sorted_frac[:, 1:]
        weights[:, -1] = sorted_frac[:, -1]
        verts = np.empty((B, d, d - 1), dtype=int)
        verts[:, 0] = base
        rows = np.arange(B)
        cur = base.copy()
        for m in range(1, d):
            cur[rows, order[:, m - 1]] += 1
            verts[:, m] = cur
        flat = np.ravel_multi_index(tuple(np.moveaxis(verts, -1, 0)), self._shape)
        idx = self._index.reshape(-1)[flat]
        if np.any(idx < 0):
            raise AssertionError("interpolation stencil left the grid")
        return idx, np.clip(weights, 0.0, 1.0)

    def interpolation_matrix(self, X) -> np.ndarray:
        """Dense (B, len(grid)) matrix mapping grid values to interpolated values at X."""
        idx, w = self.locate(X)
        out = np.zeros((idx.shape[0], len(self)))
        np.add.at(out, (np.repeat(np.arange(idx.shape[0]), idx.shape[1]), idx.ravel()), w.ravel())
        return out

    def nearest_index(self, x) -> int:
        x = np.asarray(x, dtype=float)
        return int(np.argmin(np.abs(self.points - x).sum(axis=1)))

    def neighbours(self) -> list[tuple[int, int]]:
        """Pairs of grid points one step (mass 1/n moved between two coordinates) apart."""
        if self.dim == 1:
            return []
        n = self.resolution
        counts = np.rint(self.points * n).astype(int)
        lookup = {tuple(c): i for i, c in enumerate(counts)}
        pairs = []
        for i, c in enumerate(counts):
            for a in range(self.dim):
                if c[a] == 0:
                    continue
                for b in range(self.dim):
                    if b == a:
                        continue
                    d = c.copy()
                    d[a] -= 1
                    d[b] += 1
                    j = lookup[tuple(d)]
                    if i < j:
                        pairs.append((i, j))
        return pairs


@dataclass(eq=False)
class ValueTable:
    """A function on Delta(K) x Delta(L) stored on a product barycentric grid.

    ``values[a, b]`` is the value at ``(grid_p.points[a], grid_q.points[b])``.
    ``error`` carries a per-point certified error bar (solver gaps plus
    propagated interpolation error) when the table came out of a solver.
    """

    grid_p: SimplexGrid
    grid_q: SimplexGrid
    values: np.ndarray
    lipschitz: float = 1.0
    error: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.grid_p), len(self.grid_q))
        if self.values.shape != expected:
            raise ValueError(f"values have shape {self.values.shape}, grid needs {expected}")
        if self.error is None:
            self.error = np.zeros_like(self.values)

    @classmethod
    def from_function(cls, func, grid_p: SimplexGrid, grid_q: SimplexGrid, lipschitz: float = 1.0, **kw):
        vals = np.array([[func(p, q) for q in grid_q.points] for p in grid_p.points], dtype=float)
        return cls(grid_p, grid_q, vals, lipschitz=lipschitz, **kw)

    @classmethod
    def constant(cls, c: float, grid_p: SimplexGrid, grid_q: SimplexGrid, lipschitz: float = 0.0):
        return cls(grid_p, grid_q, np.full((len(grid_p), len(grid_q)), float(c)), lipschitz=lipschitz)

    def with_values(self, values, **changes) -> "ValueTable":
        kw = dict(lipschitz=self.lipschitz, meta=dict(self.meta))
        kw.update(changes)
        return ValueTable(self.grid_p, self.grid_q, values, **kw)

    @property
    def interpolation_error(self) -> float:
        return self.lipschitz * (self.grid_p.mesh + self.grid_q.mesh)

    def evaluate(self, p, q) -> float:
        ip, wp = self.grid_p.locate(p)
        iq, wq = self.grid_q.locate(q)
        return float(wp[0] @ self.values[np.ix_(ip[0], iq[0])] @ wq[0])

    def evaluate_pairs(self, P, Q) -> np.ndarray:
        """Values at the pairs (P[b], Q[b])."""
        ip, wp = self.grid_p.locate(P)
        iq, wq = self.grid_q.locate(Q)
        sub = self.values[ip[:, :, None], iq[:, None, :]]
        return np.einsum("bi,bij,bj->b", wp, sub, wq)

    def evaluate_product(self, P, Q) -> np.ndarray:
        """Values on the product set P x Q, shape (len(P), len(Q))."""
        Lp = self.grid_p.interpolation_matrix(P)
        Lq = self.grid_q.interpolation_matrix(Q)
        return Lp @ self.values @ Lq.T

    def sup_distance(self, other: "ValueTable") -> float:
        return float(np.max(np.abs(self.values - other.values)))
