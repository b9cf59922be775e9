"""Simulation of plays, exact posterior tracking and the constructive strategies.

A strategy sees the public history, its owner's current private state and
a latent mode carrying its internal randomisation.  Before acting at every
stage the mode is redrawn from ``modes``; the action is drawn from
``mixed``.  The public posteriors (functions of the public history under
the declared strategy pair) are passed along in the :class:`Context`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadCombination
from .game_model import GameSpec, make_game, posterior
from .mz_solver import balanced_lift, splitting_for_cav
from .nonrevealing import NrLimit, nr_constraint
from .tables import ValueTable
from .value_iteration import SolverOptions, stage_strategy

COMBINATION_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Context:
    """What a strategy may condition on at stage ``t`` (0-based).

    ``history`` lists ``(own action, other action)`` pairs of past stages;
    ``own_path``/``other_path`` hold the public posteriors on the owner's
    and the opponent's states for stages ``0..t``.
    """

    t: int
    history: tuple
    own_path: tuple
    other_path: tuple

    @property
    def own_belief(self) -> np.ndarray:
        return self.own_path[-1]

    @property
    def other_belief(self) -> np.ndarray:
        return self.other_path[-1]


class Strategy:
    """Behavior strategy with latent modes; subclasses override ``mixed`` and possibly ``modes``."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def modes(self, ctx: Context, state: int, mode):
        return [(mode, 1.0)]

    def mixed(self, ctx: Context, state: int, mode) -> np.ndarray:
        raise NotImplementedError


class BehavioralStrategy(Strategy):
    """The same behavioral action ``x[state]`` at every stage."""

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        super().__init__(x.shape[1])
        self.x = x

    def mixed(self, ctx, state, mode):
        return self.x[state]


class UniformStrategy(Strategy):
    def mixed(self, ctx, state, mode):
        return np.full(self.n_actions, 1.0 / self.n_actions)


class CallableStrategy(Strategy):
    """Wraps ``fn(ctx, state) -> mixed action``."""

    def __init__(self, n_actions: int, fn):
        super().__init__(n_actions)
        self.fn = fn

    def mixed(self, ctx, state, mode):
        return np.asarray(self.fn(ctx, state), dtype=float)


class _SplitStrategy(Strategy):
    def __init__(self, weights, beliefs, components, prior, start: int = 0):
        super().__init__(components[0].n_actions)
        self.weights = weights
        self.beliefs = beliefs
        self.components = components
        self.prior = prior
        self.start = start

    def modes(self, ctx, state, mode):
        if ctx.t == self.start:
            out = []
            for s, comp in enumerate(self.components):
                pick = self.weights[s] * self.beliefs[s, state] / self.prior[state]
                if pick <= 0:
                    continue
                for inner, pr in comp.modes(ctx, state, None):
                    out.append(((s, inner), pick * pr))
            return out
        s, inner = mode
        return [((s, m), pr) for m, pr in self.components[s].modes(ctx, state, inner)]

    def mixed(self, ctx, state, mode):
        s, inner = mode
        return self.components[s].mixed(ctx, state, inner)


def split_strategy(weights, components, start: int = 0) -> Strategy:
    """Observe the state at stage ``start``, pick component ``s`` with probability
    ``w_s p_s^k / p^k`` and follow it from then on.

    ``components`` is a list of ``(p_s, strategy_s)``; ``p = sum_s w_s p_s``.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) != len(components) or len(w) == 0:
        raise BadCombination("one weight per component is required")
    if np.any(w < -COMBINATION_TOL) or abs(w.sum() - 1.0) > COMBINATION_TOL:
        raise BadCombination(f"weights {w.tolist()} are not a probability vector")
    beliefs = np.array([np.asarray(c[0], dtype=float) for c in components])
    if np.any(beliefs < -COMBINATION_TOL) or np.any(np.abs(beliefs.sum(axis=1) - 1.0) > COMBINATION_TOL):
        raise BadCombination("component beliefs must be probability vectors")
    if len(components) == 1:
        return components[0][1]
    prior = w @ beliefs
    return _SplitStrategy(w, beliefs, [c[1] for c in components], prior, start)


# ---------------------------------------------------------------------------
# exact tracking and enumeration

def _draw(rng: np.random.Generator, probs) -> int:
    probs = probs.tolist() if isinstance(probs, np.ndarray) else list(probs)
    u = rng.random() * math.fsum(probs)
    acc = 0.0
    for n, pr in enumerate(probs):
        acc += pr
        if u < acc:
            return n
    return max(n for n, pr in enumerate(probs) if pr > 0)


class _Tracker:
    """Law of (state, mode) given the public history, for one player."""

    def __init__(self, strategy: Strategy, prior):
        self.strategy = strategy
        self.joint = {None: np.asarray(prior, dtype=float).copy()}

    def belief(self) -> np.ndarray:
        total = sum(self.joint.values())
        return total / total.sum()

    def refresh_modes(self, ctx: Context) -> None:
        new: dict = {}
        for mode, vec in self.joint.items():
            for k in np.flatnonzero(vec > 0):
                for m, pr in self.strategy.modes(ctx, int(k), mode):
                    if pr <= 0:
                        continue
                    if m not in new:
                        new[m] = np.zeros_like(vec)
                    new[m][k] += vec[k] * pr
        self.joint = new

    def observe(self, ctx: Context, action: int) -> None:
        new = {}
        for mode, vec in self.joint.items():
            like = np.array([self.strategy.mixed(ctx, int(k), mode)[action] if vec[k] > 0 else 0.0 for k in range(len(vec))])
            v = vec * like
            if v.sum() > 0:
                new[mode] = v
        total = sum(v.sum() for v in new.values())
        self.joint = {m: v / total for m, v in new.items()}

    def advance(self, M) -> None:
        self.joint = {m: v @ M for m, v in self.joint.items()}


@dataclass
class PlayRecord:
    """One trajectory; beliefs have one more row than stages (the law after the last move)."""

    states_k: np.ndarray
    states_l: np.ndarray
    actions_i: np.ndarray
    actions_j: np.ndarray
    payoffs: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray

    @property
    def average_payoff(self) -> float:
        return math.fsum(self.payoffs) / len(self.payoffs)


@dataclass
class SimulationResult:
    mean: float
    standard_error: float
    payoffs: np.ndarray  # stage-average payoff per run
    records: list = field(default_factory=list)


def _contexts(t, hist1, hist2, p_path, q_path):
    return Context(t, tuple(hist1), tuple(p_path), tuple(q_path)), Context(t, tuple(hist2), tuple(q_path), tuple(p_path))


def _play_once(spec: GameSpec, sigma: Strategy, tau: Strategy, T: int, rng, p0, q0) -> PlayRecord:
    M, N = spec.M, spec.N
    B, C = spec.chain_k.limit_matrix, spec.chain_l.limit_matrix
    k = _draw(rng, p0)
    l = _draw(rng, q0)
    tr1, tr2 = _Tracker(sigma, p0), _Tracker(tau, q0)
    m1 = m2 = None
    hist1, hist2, p_path, q_path = [], [], [], []
    rec = {name: [] for name in ("k", "l", "i", "j", "g")}
    for t in range(T):
        p_path.append(tr1.belief())
        q_path.append(tr2.belief())
        c1, c2 = _contexts(t, hist1, hist2, p_path, q_path)
        opts1 = sigma.modes(c1, k, m1)
        m1 = opts1[_draw(rng, [pr for _, pr in opts1])][0]
        opts2 = tau.modes(c2, l, m2)
        m2 = opts2[_draw(rng, [pr for _, pr in opts2])][0]
        i = _draw(rng, sigma.mixed(c1, k, m1))
        j = _draw(rng, tau.mixed(c2, l, m2))
        for name, v in zip("klij", (k, l, i, j)):
            rec[name].append(v)
        rec["g"].append(spec.payoff[k, l, i, j])
        tr1.refresh_modes(c1)
        tr1.observe(c1, i)
        tr2.refresh_modes(c2)
        tr2.observe(c2, j)
        tr1.advance(M)
        tr2.advance(N)
        hist1.append((i, j))
        hist2.append((j, i))
        k = _draw(rng, M[k])
        l = _draw(rng, N[l])
    p_path.append(tr1.belief())
    q_path.append(tr2.belief())
    P, Q = np.array(p_path), np.array(q_path)
    return PlayRecord(
        states_k=np.array(rec["k"]),
        states_l=np.array(rec["l"]),
        actions_i=np.array(rec["i"]),
        actions_j=np.array(rec["j"]),
        payoffs=np.array(rec["g"], dtype=float),
        p=P,
        q=Q,
        p_hat=P @ B,
        q_hat=Q @ C,
    )


def simulate(
    spec: GameSpec,
    sigma: Strategy,
    tau: Strategy,
    T: int,
    runs: int,
    seed: int = 0,
    p0=None,
    q0=None,
    keep_records: bool = True,
) -> SimulationResult:
    """Independent plays with per-run seeded generators.

    Returns the mean stage-average payoff, its standard error and the
    records.  Identical seeds reproduce identical records.
    """
    p0 = spec.p0 if p0 is None else np.asarray(p0, dtype=float)
    q0 = spec.q0 if q0 is None else np.asarray(q0, dtype=float)
    children = np.random.SeedSequence(seed).spawn(runs)
    payoffs = np.empty(runs)
    records = []
    for r, child in enumerate(children):
        rec = _play_once(spec, sigma, tau, T, np.random.Generator(np.random.PCG64(child)), p0, q0)
        payoffs[r] = rec.average_payoff
        if keep_records:
            records.append(rec)
    mean = math.fsum(payoffs) / runs
    if runs > 1:
        var = math.fsum((payoffs - mean) ** 2) / (runs - 1)
        se = math.sqrt(var / runs)
    else:
        se = float("nan")
    return SimulationResult(mean=mean, standard_error=se, payoffs=payoffs, records=records)


def track_history(spec: GameSpec, sigma: Strategy, tau: Strategy, history, p0=None, q0=None):
    """Public posteriors ``(p_t, q_t)`` along a given public history ``((i, j), ...)``."""
    p0 = spec.p0 if p0 is None else np.asarray(p0, dtype=float)
    q0 = spec.q0 if q0 is None else np.asarray(q0, dtype=float)
    tr1, tr2 = _Tracker(sigma, p0), _Tracker(tau, q0)
    hist1, hist2, p_path, q_path = [], [], [], []
    for t, (i, j) in enumerate(history):
        p_path.append(tr1.belief())
        q_path.append(tr2.belief())
        c1, c2 = _contexts(t, hist1, hist2, p_path, q_path)
        tr1.refresh_modes(c1)
        tr1.observe(c1, i)
        tr2.refresh_modes(c2)
        tr2.observe(c2, j)
        tr1.advance(spec.M)
        tr2.advance(spec.N)
        hist1.append((i, j))
        hist2.append((j, i))
    p_path.append(tr1.belief())
    q_path.append(tr2.belief())
    return np.array(p_path), np.array(q_path)


@dataclass
class Enumeration:
    """Exact law of public histories of length T and public posteriors along every prefix."""

    law: dict  # history -> probability
    beliefs: dict  # prefix -> (p_t, q_t)
    prefix_law: dict  # prefix -> probability

    def total_variation(self, other: "Enumeration | dict") -> float:
        o = other.law if isinstance(other, Enumeration) else other
        keys = set(self.law) | set(o)
        return 0.5 * math.fsum(abs(self.law.get(h, 0.0) - o.get(h, 0.0)) for h in keys)


def enumerate_plays(spec: GameSpec, sigma: Strategy, tau: Strategy, T: int, p0=None, q0=None) -> Enumeration:
    """Forward pass over the joint law of (k, mode_1, l, mode_2) for every public history.

    Unnormalised joint masses are carried along each branch, so the law of a
    history is the total mass at its node; this is independent of the
    factorised tracker used by :func:`simulate`.
    """
    p0 = spec.p0 if p0 is None else np.asarray(p0, dtype=float)
    q0 = spec.q0 if q0 is None else np.asarray(q0, dtype=float)
    M, N = spec.M, spec.N
    I, J = spec.n_i, spec.n_j
    law: dict = {}
    beliefs: dict = {}
    prefix_law: dict = {}

    def visit(joint: dict, history: tuple, p_path: tuple, q_path: tuple):
        total = math.fsum(v.sum() for v in joint.values())
        if total <= 0:
            return
        marg = sum(joint.values()) / total
        p_t, q_t = marg.sum(axis=1), marg.sum(axis=0)
        p_path = p_path + (p_t,)
        q_path = q_path + (q_t,)
        beliefs[history] = (p_t, q_t)
        prefix_law[history] = total
        t = len(history)
        if t == T:
            law[history] = total
            return
        c1 = Context(t, tuple((i, j) for i, j in history), p_path, q_path)
        c2 = Context(t, tuple((j, i) for i, j in history), q_path, p_path)
        refreshed: dict = {}
        for (m1, m2), mat in joint.items():
            for k, l in zip(*np.nonzero(mat > 0)):
                for n1, a in sigma.modes(c1, int(k), m1):
                    for n2, b in tau.modes(c2, int(l), m2):
                        if a * b <= 0:
                            continue
                        key = (n1, n2)
                        if key not in refreshed:
                            refreshed[key] = np.zeros_like(mat)
                        refreshed[key][k, l] += mat[k, l] * a * b
        for i in range(I):
            for j in range(J):
                child: dict = {}
                for (m1, m2), mat in refreshed.items():
                    xi = np.array([sigma.mixed(c1, k, m1)[i] for k in range(mat.shape[0])])
                    yj = np.array([tau.mixed(c2, l, m2)[j] for l in range(mat.shape[1])])
                    nxt = M.T @ (mat * np.outer(xi, yj)) @ N
                    if nxt.sum() > 0:
                        child[(m1, m2)] = nxt
                if child:
                    visit(child, history + ((i, j),), p_path, q_path)

    visit({(None, None): np.outer(p0, q0)}, (), (), ())
    return Enumeration(law, beliefs, prefix_law)


def mixture_law(enumerations, weights) -> dict:
    out: dict = {}
    for e, w in zip(enumerations, weights):
        for h, pr in e.law.items():
            out[h] = out.get(h, 0.0) + w * pr
    return out


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class MartingaleReport:
    variation_mean: float  # mean over runs of sum_t ||q_hat_{t+1} - q_hat_t||_1
    variation_se: float
    variation_bound: float  # sqrt(T (|L| - 1))
    max_abs_z: float  # largest |z| of per-stage, per-coordinate mean increments of p_hat
    p_variation_mean: float

    @property
    def variation_ok(self) -> bool:
        return self.variation_mean <= self.variation_bound + 3.0 * self.variation_se


def martingale_diagnostics(records) -> MartingaleReport:
    """Variation of the projected posteriors and a z-test of their martingale property."""
    q_hat = np.array([r.q_hat for r in records])
    p_hat = np.array([r.p_hat for r in records])
    runs, steps, L = q_hat.shape
    T = steps - 1
    var_q = np.abs(np.diff(q_hat, axis=1)).sum(axis=(1, 2))
    var_p = np.abs(np.diff(p_hat, axis=1)).sum(axis=(1, 2))
    se = float(var_q.std(ddof=1) / np.sqrt(runs)) if runs > 1 else float("nan")
    inc = np.diff(p_hat, axis=1)  # (runs, T, K)
    mean = inc.mean(axis=0)
    sd = inc.std(axis=0, ddof=1) if runs > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 1e-14, mean / (sd / np.sqrt(runs)), 0.0)
    return MartingaleReport(
        variation_mean=float(var_q.mean()),
        variation_se=se,
        variation_bound=math.sqrt(T * (L - 1)),
        max_abs_z=float(np.abs(z).max()) if z.size else 0.0,
        p_variation_mean=float(var_p.mean()),
    )


def exact_martingale_gap(enum: Enumeration, B, C) -> float:
    """max over prefixes h_t of ||E[p_hat_{t+1} | h_t] - p_hat_t|| (and for q), exactly."""
    worst = 0.0
    for h, (p, q) in enum.beliefs.items():
        kids = [(h2, pr) for h2, pr in enum.prefix_law.items() if len(h2) == len(h) + 1 and h2[: len(h)] == h]
        if not kids:
            continue
        tot = math.fsum(pr for _, pr in kids)
        ep = sum(pr * enum.beliefs[h2][0] for h2, pr in kids) / tot
        eq = sum(pr * enum.beliefs[h2][1] for h2, pr in kids) / tot
        worst = max(worst, float(np.abs((ep - p) @ B).max()), float(np.abs((eq - q) @ C).max()))
    return worst


# ---------------------------------------------------------------------------
# constructive strategies

def transpose_game(spec: GameSpec) -> GameSpec:
    """The same game seen from Player 2: roles swapped and payoff negated."""
    return make_game(
        -spec.payoff.transpose(1, 0, 3, 2),
        spec.chain_l,
        spec.chain_k,
        spec.q0,
        spec.p0,
    )


def _key(v) -> tuple:
    return tuple(round(c, 12) for c in np.asarray(v, dtype=float).tolist())


class NrBlockStrategy(Strategy):
    """Player 1's perturbed optimal nonrevealing play over one block.

    At stage ``start`` the block is played uniformly with probability
    ``epsilon``; otherwise, at block stage ``u`` with internal belief ``p_u``
    (started at ``p`` and updated with the strategy's own actions) and public
    opponent belief ``q_u``, the saddle action of the stage game defining
    ``vhat_{T0-u}`` is played.
    """

    def __init__(self, spec, p, T0, epsilon, vhat_tables, start=0, options=SolverOptions()):
        super().__init__(spec.n_i)
        if T0 < 1:
            raise ValueError("T0 must be at least 1")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if len(vhat_tables) < T0 - 1:
            raise ValueError(f"need vhat_1..vhat_{T0 - 1} for blocks of length {T0}")
        self.spec = spec
        self.p = np.asarray(p, dtype=float)
        self.T0 = T0
        self.epsilon = epsilon
        self.tables = vhat_tables
        self.start = start
        self.options = options
        self._xc = nr_constraint(spec.chain_k, spec.n_i)
        self._yc = nr_constraint(spec.chain_l, spec.n_j)
        self._cache: dict = {}
        self._zero = None

    def _continuation(self, n: int) -> ValueTable:
        if n >= 1:
            return self.tables[n - 1]
        if self._zero is None:
            base = self.tables[0] if self.tables else None
            if base is None:
                from .tables import SimplexGrid

                base = ValueTable.constant(0.0, SimplexGrid(self.spec.n_k, 2), SimplexGrid(self.spec.n_l, 2))
            self._zero = ValueTable.constant(0.0, base.grid_p, base.grid_q)
        return self._zero

    def action_at(self, u: int, p_u, q_u) -> np.ndarray:
        key = (u, _key(p_u), _key(q_u))
        if key not in self._cache:
            remaining = self.T0 - u
            x, _, _ = stage_strategy(
                self.spec, self._continuation(remaining - 1), 1.0 / remaining, p_u, q_u, self._xc, self._yc, self.options
            )
            self._cache[key] = x
        return self._cache[key]

    def modes(self, ctx, state, mode):
        if ctx.t == self.start:
            out = []
            if self.epsilon < 1.0:
                out.append(("opt", 1.0 - self.epsilon))
            if self.epsilon > 0.0:
                out.append(("uniform", self.epsilon))
            return out
        return [(mode, 1.0)]

    def mixed(self, ctx, state, mode):
        if mode == "uniform":
            return np.full(self.n_actions, 1.0 / self.n_actions)
        u = ctx.t - self.start
        p_u = self.p
        for s in range(u):
            x = self.action_at(s, p_u, ctx.other_path[self.start + s])
            own = ctx.history[self.start + s][0]
            p_u = posterior(p_u, x, own) @ self.spec.M
        return self.action_at(u, p_u, ctx.other_path[ctx.t])[state]


def nr_optimal_block_strategy(spec, p, q, T0, epsilon, vhat_tables, options=SolverOptions()) -> Strategy:
    """The perturbed nonrevealing strategy for one block of ``T0`` stages starting at ``(p, q)``.

    ``q`` is the opponent belief at the block start; later stages read the
    public opponent belief from the context.
    """
    return NrBlockStrategy(spec, p, T0, epsilon, vhat_tables, 0, options)


@dataclass
class BlockStrategyConfig:
    """Inputs of the block strategy.

    ``w`` is a balanced table in C-(vhat); ``vhat`` the balanced limit;
    ``vhat_tables`` hold vhat_1..vhat_{T0-1} for the within-block play.
    """

    w: ValueTable
    vhat: NrLimit
    T0: int
    epsilon: float
    vhat_tables: list
    options: SolverOptions = SolverOptions()
    split_tol: float = 1e-6

    def __post_init__(self):
        if self.T0 < 1:
            raise ValueError("T0 must be at least 1")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")


class BlockStrategy(Strategy):
    """Blocks of ``T0`` stages; at each block start compare vhat and w at the public beliefs,
    split when vhat is below w, then play the perturbed nonrevealing block strategy."""

    def __init__(self, spec: GameSpec, config: BlockStrategyConfig):
        super().__init__(spec.n_i)
        if config.epsilon >= 1.0 / spec.n_i:
            raise ValueError(f"epsilon must lie in (0, 1/{spec.n_i})")
        self.spec = spec
        self.config = config
        self.vhat_lift = balanced_lift(config.vhat.table, spec.chain_k, spec.chain_l, config.w.grid_p, config.w.grid_q)
        self._splits: dict = {}
        self._inner: dict = {}
        self.split_count = 0

    def splitting(self, p, q):
        key = (_key(p), _key(q))
        if key not in self._splits:
            cfg = self.config
            if cfg.vhat.evaluate(p, q) >= cfg.w.evaluate(p, q):
                split = (np.array([1.0]), np.asarray(p, dtype=float)[None, :])
            else:
                s = splitting_for_cav(cfg.w, self.vhat_lift, p, q, cfg.split_tol)
                split = (s.weights, s.atoms)
                self.split_count += 1
            self._splits[key] = split
        return self._splits[key]

    def _inner_strategy(self, atom, start) -> NrBlockStrategy:
        key = (_key(atom), start)
        if key not in self._inner:
            cfg = self.config
            self._inner[key] = NrBlockStrategy(self.spec, atom, cfg.T0, cfg.epsilon, cfg.vhat_tables, start, cfg.options)
        return self._inner[key]

    def modes(self, ctx, state, mode):
        T0 = self.config.T0
        if ctx.t % T0 == 0:
            start = ctx.t
            p, q = ctx.own_belief, ctx.other_belief
            weights, atoms = self.splitting(p, q)
            out = []
            for s, (wt, atom) in enumerate(zip(weights, atoms)):
                pick = wt * atom[state] / p[state] if p[state] > 0 else 0.0
                if pick <= 0:
                    continue
                inner = self._inner_strategy(atom, start)
                for m, pr in inner.modes(ctx, state, None):
                    out.append(((start, s, m), pick * pr))
            total = sum(pr for _, pr in out)
            return [(m, pr / total) for m, pr in out]
        return [(mode, 1.0)]

    def mixed(self, ctx, state, mode):
        start, s, inner_mode = mode
        weights, atoms = self.splitting(ctx.own_path[start], ctx.other_path[start])
        return self._inner_strategy(atoms[s], start).mixed(ctx, state, inner_mode)


def block_strategy(spec: GameSpec, config: BlockStrategyConfig) -> BlockStrategy:
    return BlockStrategy(spec, config)
