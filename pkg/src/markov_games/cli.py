"""Command-line front end: game-file ingestion, command dispatch, caching and CSV output."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import MarkovGameError, ParseError, ValidationError
from .game_model import GameSpec, make_game
from .markov_core import analyze_chain
from .tables import ValueTable

CACHE_ENV = "MARKOV_GAMES_CACHE"
CACHE_VERSION = 1
COMMANDS = ("analyze-chain", "value", "nrvalue", "vhat-limit", "mz", "solve", "simulate", "verify")
FIELDS = ("states_k", "states_l", "actions_i", "actions_j", "payoff", "transition_k", "transition_l", "p0", "q0")


# ---------------------------------------------------------------------------
# game files

def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ParseError(f"{where}: expected a decimal string, got {value!r}")
    try:
        return float(Fraction(value.strip() if isinstance(value, str) else value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"{where}: {value!r} is not a decimal number") from exc


def _array(value, shape: tuple, where: str) -> np.ndarray:
    def walk(v, depth, path):
        if depth == len(shape):
            return _number(v, f"{where}{path}")
        if not isinstance(v, list) or len(v) != shape[depth]:
            got = len(v) if isinstance(v, list) else type(v).__name__
            raise ValidationError(f"{where}{path}: expected a list of {shape[depth]} entries, got {got}")
        return [walk(x, depth + 1, f"{path}[{n}]") for n, x in enumerate(v)]

    return np.array(walk(value, 0, ""), dtype=float)


def _labels(doc: dict, name: str) -> list[str]:
    v = doc[name]
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        raise ValidationError(f"{name}: expected a non-empty list of names")
    if len(set(v)) != len(v):
        raise ValidationError(f"{name}: names must be distinct")
    return v


def parse_game(text: str, allow_periodic: bool = False) -> GameSpec:
    """Build a game from the JSON document; every number is a decimal string."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("the game file must hold a JSON object")
    missing = [f for f in FIELDS if f not in doc]
    if missing:
        raise ValidationError(f"missing field(s): {', '.join(missing)}")
    unknown = sorted(set(doc) - set(FIELDS))
    if unknown:
        raise ValidationError(f"unknown field(s): {', '.join(unknown)}")
    sk, sl, ai, aj = (_labels(doc, f) for f in FIELDS[:4])
    K, L, I, J = len(sk), len(sl), len(ai), len(aj)
    payoff = _array(doc["payoff"], (K, L, I, J), "payoff")
    M = _array(doc["transition_k"], (K, K), "transition_k")
    N = _array(doc["transition_l"], (L, L), "transition_l")
    p0 = _array(doc["p0"], (K,), "p0")
    q0 = _array(doc["q0"], (L,), "q0")
    chains = []
    for name, mat in (("transition_k", M), ("transition_l", N)):
        try:
            chain = analyze_chain(mat)
        except MarkovGameError as exc:
            raise type(exc)(f"{name}: {exc}") from exc
        if chain.period > 1 and not allow_periodic:
            raise ValidationError(
                f"{name}: the chain has period {chain.period}; periodic chains must be re-expressed "
                f"in blocks of {chain.period} stages, which changes the action sets and is not supported"
            )
        chains.append(chain)
    labels = {"states_k": sk, "states_l": sl, "actions_i": ai, "actions_j": aj}
    return make_game(payoff, chains[0], chains[1], p0, q0, labels)


def ingest(path, allow_periodic: bool = False) -> GameSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read game file {path}: {exc}") from exc
    return parse_game(text, allow_periodic)


def _fmt(x: float) -> str:
    x = float(x)
    return "0.0" if x == 0.0 else repr(x)


def game_document(spec: GameSpec) -> dict:
    """Canonical JSON-ready form of a game (numbers as shortest round-trip decimal strings)."""
    def enc(a):
        return [enc(v) for v in a] if isinstance(a, np.ndarray) and a.ndim else _fmt(a)

    return {
        "states_k": list(spec.states_k),
        "states_l": list(spec.states_l),
        "actions_i": list(spec.actions_i),
        "actions_j": list(spec.actions_j),
        "payoff": enc(spec.payoff),
        "transition_k": enc(spec.M),
        "transition_l": enc(spec.N),
        "p0": enc(spec.p0),
        "q0": enc(spec.q0),
    }


# ---------------------------------------------------------------------------
# output

def table_csv(table: ValueTable, p_names, q_names, error=None) -> str:
    """Rows of belief coordinates, value and certified error."""
    err = table.error if error is None else np.broadcast_to(np.asarray(error, dtype=float), table.values.shape)
    head = [f"p_{n}" for n in p_names] + [f"q_{n}" for n in q_names] + ["value", "error"]
    lines = [",".join(head)]
    for a, p in enumerate(table.grid_p.points):
        pc = [_fmt(c) for c in p]
        for b, q in enumerate(table.grid_q.points):
            lines.append(",".join(pc + [_fmt(c) for c in q] + [_fmt(table.values[a, b]), _fmt(err[a, b])]))
    return "\n".join(lines) + "\n"


def records_csv(records, spec: GameSpec) -> str:
    head = ["run", "t", "k", "l", "i", "j", "payoff"]
    head += [f"p_{n}" for n in spec.states_k] + [f"q_{n}" for n in spec.states_l]
    head += [f"phat_{n}" for n in spec.states_k] + [f"qhat_{n}" for n in spec.states_l]
    lines = [",".join(head)]
    for r, rec in enumerate(records):
        for t in range(len(rec.payoffs)):
            row = [str(r), str(t), spec.states_k[rec.states_k[t]], spec.states_l[rec.states_l[t]]]
            row += [spec.actions_i[rec.actions_i[t]], spec.actions_j[rec.actions_j[t]], _fmt(rec.payoffs[t])]
            for arr in (rec.p, rec.q, rec.p_hat, rec.q_hat):
                row += [_fmt(c) for c in arr[t]]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def atomic_write(path: Path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# configuration and cache

@dataclass(frozen=True)
class RunConfig:
    command: str
    game: str = ""
    T: int = 8
    resolution: int = 6
    tol: float = 1e-3
    seed: int = 0
    runs: int = 200
    out: str | None = None
    cache: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"command must be one of {', '.join(COMMANDS)}")
        if self.T < 1:
            raise ValidationError("T must be at least 1")
        if self.resolution < 2:
            raise ValidationError("resolution must be at least 2")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.runs < 1:
            raise ValidationError("runs must be at least 1")


@dataclass
class Outcome:
    summary: str
    csv: str = ""
    ok: bool = True


def cache_key(spec: GameSpec | None, config: RunConfig) -> str:
    payload = {
        "version": CACHE_VERSION,
        "game": None if spec is None else game_document(spec),
        "config": {k: v for k, v in asdict(config).items() if k not in ("game", "out", "cache")},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _cache_dir(config: RunConfig):
    d = config.cache or os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _cache_load(directory: Path, key: str):
    path = directory / f"{key}.json"
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    return Outcome(data["summary"], data["csv"], data["ok"])


def _cache_store(directory: Path, key: str, outcome: Outcome) -> None:
    atomic_write(directory / f"{key}.json", json.dumps(asdict(outcome), sort_keys=True))


# ---------------------------------------------------------------------------
# commands

def _options(config: RunConfig):
    from .value_iteration import SolverOptions

    return SolverOptions(tol=config.tol)


def _chain_report(name: str, chain, labels) -> list[str]:
    out = [f"{name}: {chain.n_classes} recurrence class(es), period {chain.period}"]
    for r, cls in enumerate(chain.classes):
        members = "{" + ",".join(labels[k] for k in cls) + "}"
        measure = ", ".join(_fmt(v) for v in chain.invariant_measures[r])
        out.append(f"  class {r + 1} {members}: invariant measure ({measure})")
    out.append("  limit matrix:")
    out += ["    " + " ".join(_fmt(v) for v in row) for row in chain.limit_matrix]
    return out


def _cmd_analyze_chain(spec, config):
    lines = _chain_report("transition_k", spec.chain_k, spec.states_k)
    lines += _chain_report("transition_l", spec.chain_l, spec.states_l)
    return Outcome("\n".join(lines) + "\n")


def _cmd_value(spec, config):
    from .value_iteration import compute_v

    table = compute_v(spec, config.T, config.resolution, config.tol, _options(config))[-1]
    summary = f"v_{config.T}: max certified local error {_fmt(table.error.max())}\n"
    return Outcome(summary, table_csv(table, spec.states_k, spec.states_l))


def _cmd_nrvalue(spec, config):
    from .nonrevealing import compute_vhat

    table = compute_vhat(spec, config.T, config.resolution, config.tol, _options(config))[-1]
    summary = f"vhat_{config.T}: max certified local error {_fmt(table.error.max())}\n"
    return Outcome(summary, table_csv(table, spec.states_k, spec.states_l))


def _class_names(chain, labels):
    return ["{" + "|".join(labels[k] for k in cls) + "}" for cls in chain.classes]


def _vhat_limit(spec, config):
    from .nonrevealing import estimate_vhat_limit

    return estimate_vhat_limit(
        spec,
        tol=max(config.tol, 0.02),
        resolution=config.resolution,
        class_resolution=2 * config.resolution,
        T_start=min(4, config.T),
        T_max=max(config.T, 8),
        options=_options(config),
        strict=False,
    )


def _cmd_vhat_limit(spec, config):
    lim = _vhat_limit(spec, config)
    inc = ", ".join(f"T={s['T']}: {_fmt(s['increment'])}" for s in lim.schedule)
    summary = (
        f"vhat limit at T={lim.T} ({'converged' if lim.converged else 'not converged'}); "
        f"error bound {_fmt(lim.error_bound)}; balanced residual {_fmt(lim.balanced_residual)}\n"
        f"doubling increments: {inc}\n"
    )
    csv = table_csv(
        lim.table, _class_names(spec.chain_k, spec.states_k), _class_names(spec.chain_l, spec.states_l), lim.error_bound
    )
    return Outcome(summary, csv, lim.converged)


def _mz(spec, config):
    from .mz_solver import mz_fixed_point

    lim = _vhat_limit(spec, config)
    return lim, mz_fixed_point(lim, tol=config.tol, strict=False)


def _cmd_mz(spec, config):
    lim, res = _mz(spec, config)
    bound = lim.error_bound + max(res.residual_vex, res.residual_cav)
    summary = (
        f"MZ(vhat): {res.iterations} sweeps, residuals vex {_fmt(res.residual_vex)}, cav {_fmt(res.residual_cav)}; "
        f"error bound {_fmt(bound)}\n"
    )
    csv = table_csv(res.w, _class_names(spec.chain_k, spec.states_k), _class_names(spec.chain_l, spec.states_l), bound)
    return Outcome(summary, csv, res.converged)


def _cmd_solve(spec, config):
    from .mz_solver import balanced_lift
    from .tables import SimplexGrid

    if np.ptp(spec.payoff) == 0.0:
        c = float(spec.payoff.flat[0])
        gp, gq = SimplexGrid(spec.n_k, config.resolution), SimplexGrid(spec.n_l, config.resolution)
        table = ValueTable.constant(c, gp, gq)
        summary = f"constant game: v_T = MZ(vhat) = {_fmt(c)}; sup-norm gap 0.0\n"
        return Outcome(summary, table_csv(table, spec.states_k, spec.states_l))
    from .value_iteration import compute_v

    v = compute_v(spec, config.T, config.resolution, config.tol, _options(config))[-1]
    lim, res = _mz(spec, config)
    w = balanced_lift(res.w, spec.chain_k, spec.chain_l, v.grid_p, v.grid_q)
    gap = float(np.max(np.abs(v.values - w.values)))
    bound = lim.error_bound + max(res.residual_vex, res.residual_cav)
    summary = f"sup |v_{config.T} - lifted MZ(vhat)| = {_fmt(gap)}; MZ error bound {_fmt(bound)}\n"
    return Outcome(summary, table_csv(w, spec.states_k, spec.states_l, bound), res.converged)


def _cmd_simulate(spec, config):
    from .mz_solver import balanced_lift
    from .simulator import BlockStrategyConfig, UniformStrategy, block_strategy, martingale_diagnostics, simulate

    lim, res = _mz(spec, config)
    w = balanced_lift(res.w, spec.chain_k, spec.chain_l, lim.vhat.grid_p, lim.vhat.grid_q)
    epsilon = min(0.05, 0.5 / spec.n_i)
    sigma = block_strategy(spec, BlockStrategyConfig(w=w, vhat=lim, T0=1, epsilon=epsilon, vhat_tables=[]))
    sim = simulate(spec, sigma, UniformStrategy(spec.n_j), config.T, config.runs, config.seed)
    diag = martingale_diagnostics(sim.records)
    summary = (
        f"block strategy (T0=1, epsilon={_fmt(epsilon)}) against uniform play, {config.runs} runs of {config.T} stages\n"
        f"mean payoff {_fmt(sim.mean)} (standard error {_fmt(sim.standard_error)}); "
        f"w(p0,q0) {_fmt(w.evaluate(spec.p0, spec.q0))}\n"
        f"variation of qhat {_fmt(diag.variation_mean)} (bound {_fmt(diag.variation_bound)}); "
        f"max |z| of phat increments {_fmt(diag.max_abs_z)}\n"
    )
    return Outcome(summary, records_csv(sim.records, spec), diag.variation_ok)


def _cmd_verify(spec, config):
    from .verify import run_suite

    checks = run_suite(spec, T=config.T, resolution=config.resolution, tol=config.tol, seed=config.seed, runs=config.runs)
    lines = ["check,measured,bound,status"]
    lines += [f"{c.name},{_fmt(c.measured)},{_fmt(c.bound)},{'pass' if c.ok else 'FAIL'}" for c in checks]
    failed = [c.name for c in checks if not c.ok]
    summary = f"{len(checks) - len(failed)}/{len(checks)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else "") + "\n"
    return Outcome(summary, "\n".join(lines) + "\n", not failed)


HANDLERS = {
    "analyze-chain": _cmd_analyze_chain,
    "value": _cmd_value,
    "nrvalue": _cmd_nrvalue,
    "vhat-limit": _cmd_vhat_limit,
    "mz": _cmd_mz,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
}


def run(config: RunConfig, stdout=None) -> int:
    """Execute one command; returns the exit status (0 success, 1 failed check)."""
    stdout = stdout or sys.stdout
    spec = ingest(config.game, allow_periodic=config.command == "analyze-chain")
    directory = _cache_dir(config)
    key = cache_key(spec, config)
    outcome = _cache_load(directory, key) if directory else None
    if outcome is None:
        outcome = HANDLERS[config.command](spec, config)
        if directory:
            _cache_store(directory, key, outcome)
    stdout.write(outcome.summary)
    if outcome.csv:
        if config.out:
            atomic_write(Path(config.out), outcome.csv)
        else:
            stdout.write(outcome.csv)
    return 0 if outcome.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="markov-games", description="Zero-sum repeated games with Markov private states.")
    ap.add_argument("--command", required=True, choices=COMMANDS)
    ap.add_argument("--game", required=True, help="game file (JSON with decimal strings)")
    ap.add_argument("--T", type=int, default=8, help="horizon (stages)")
    ap.add_argument("--resolution", type=int, default=6, help="belief grid resolution")
    ap.add_argument("--tol", type=float, default=1e-3, help="solver tolerance")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--runs", type=int, default=200, help="simulated plays")
    ap.add_argument("--out", help="CSV output path (stdout when omitted)")
    ap.add_argument("--cache", help=f"cache directory (default: ${CACHE_ENV}, no caching when unset)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(**vars(args))
        return run(config)
    except MarkovGameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
