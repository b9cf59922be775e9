"""Game primitives and one-stage belief algebra.

Beliefs are row vectors; a behavioral action ``x`` has shape ``(K, I)`` with
row ``k`` the mixed action used in state ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .markov_core import ChainAnalysis, analyze_chain

ZERO_MARGINAL = 1e-12


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Payoff tensor ``g[k, l, i, j]`` in [-1, 1], two chains and initial beliefs."""

    payoff: np.ndarray
    chain_k: ChainAnalysis
    chain_l: ChainAnalysis
    p0: np.ndarray
    q0: np.ndarray
    states_k: tuple[str, ...] = ()
    states_l: tuple[str, ...] = ()
    actions_i: tuple[str, ...] = ()
    actions_j: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.payoff.shape

    @property
    def n_k(self) -> int:
        return self.payoff.shape[0]

    @property
    def n_l(self) -> int:
        return self.payoff.shape[1]

    @property
    def n_i(self) -> int:
        return self.payoff.shape[2]

    @property
    def n_j(self) -> int:
        return self.payoff.shape[3]

    @property
    def M(self) -> np.ndarray:
        return self.chain_k.matrix

    @property
    def N(self) -> np.ndarray:
        return self.chain_l.matrix


def _check_belief(p, size: int, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (size,):
        raise ValidationError(f"{name} must have {size} entries, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValidationError(f"{name} is not a probability vector: {p.tolist()}")
    return p


def make_game(payoff, M, N, p0=None, q0=None, labels: dict | None = None) -> GameSpec:
    """Validate the primitives and analyse both chains.

    The payoff must lie in [-1, 1]; chains must have no transient states.
    Initial beliefs default to uniform.
    """
    g = np.asarray(payoff, dtype=float)
    if g.ndim != 4 or 0 in g.shape:
        raise ValidationError(f"payoff must be a non-empty 4-index tensor, got shape {g.shape}")
    bad = np.argwhere(~np.isfinite(g) | (g < -1.0) | (g > 1.0))
    if len(bad):
        idx = tuple(int(v) for v in bad[0])
        raise ValidationError(f"payoff{list(idx)} = {g[idx]} lies outside [-1, 1]")
    ck = M if isinstance(M, ChainAnalysis) else analyze_chain(M)
    cl = N if isinstance(N, ChainAnalysis) else analyze_chain(N)
    K, L, I, J = g.shape
    if ck.n_states != K:
        raise ValidationError(f"transition_k has {ck.n_states} states but payoff has {K}")
    if cl.n_states != L:
        raise ValidationError(f"transition_l has {cl.n_states} states but payoff has {L}")
    p0 = np.full(K, 1.0 / K) if p0 is None else _check_belief(p0, K, "p0")
    q0 = np.full(L, 1.0 / L) if q0 is None else _check_belief(q0, L, "q0")
    labels = labels or {}
    return GameSpec(
        payoff=g,
        chain_k=ck,
        chain_l=cl,
        p0=p0,
        q0=q0,
        states_k=tuple(labels.get("states_k", [str(k) for k in range(K)])),
        states_l=tuple(labels.get("states_l", [str(l) for l in range(L)])),
        actions_i=tuple(labels.get("actions_i", [str(i) for i in range(I)])),
        actions_j=tuple(labels.get("actions_j", [str(j) for j in range(J)])),
    )


def stage_payoff(spec: GameSpec, p, q, x, y) -> float:
    """Expected one-stage payoff G(p, q, x, y)."""
    return float(np.einsum("k,l,ki,lj,klij->", p, q, x, y, spec.payoff))


def action_marginal(p, x) -> np.ndarray:
    """Law of the action when the state has law ``p`` and ``x`` is played."""
    return np.asarray(p, dtype=float) @ np.asarray(x, dtype=float)


def posterior(p, x, i: int) -> np.ndarray:
    """Bayes update of ``p`` after observing action ``i``; the prior when ``i`` has null probability."""
    p = np.asarray(p, dtype=float)
    joint = p * np.asarray(x, dtype=float)[:, i]
    mass = joint.sum()
    if mass <= ZERO_MARGINAL:
        return p.copy()
    return joint / mass


def posteriors(p, x) -> tuple[np.ndarray, np.ndarray]:
    """All posteriors at once: ``(marginal, post)`` with ``post[i]`` the update after ``i``."""
    p = np.asarray(p, dtype=float)
    joint = p[:, None] * np.asarray(x, dtype=float)  # (K, I)
    marg = joint.sum(axis=0)
    post = np.where(marg[:, None] > ZERO_MARGINAL, joint.T / np.maximum(marg, ZERO_MARGINAL)[:, None], p[None, :])
    return marg, post


def advance(p, M) -> np.ndarray:
    """Law of the next state: ``p M``."""
    return np.asarray(p, dtype=float) @ np.asarray(M, dtype=float)
