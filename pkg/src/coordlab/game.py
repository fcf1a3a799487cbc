"""Zero-sum channel-state estimation game.

The encoder picks ``Q_W1`` and ``Q_{X|S,W1}`` to make the state hard to
estimate; the decoder, seeing ``(W1, Y)``, answers with the Bayes-optimal
estimate.  The encoder must keep ``I(W1;Y) >= r`` so that messages at rate
``r`` still get through.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import model, regions
from .errors import ArgumentError
from .model import AuxJoint, ProblemSpec
from .probcore import Alphabet, Kernel
from .search import (InnerMin, Linear, Negated, Outcome, Quantity, SearchConfig, block_grid,
                     grid_solve, solve)

RATE = Quantity.I("W1", "Y")


@dataclass
class GameSolution:
    """Encoder maximin solution.

    Attributes
    ----------
    d_star : float
        Exact inner minimum of the witness.
    witness : AuxJoint
        No-action aux (``W2`` degenerate) attaining ``d_star``.
    decoder : Kernel
        Deterministic best response ``(W1, Y) -> V``.
    gap : float or None
        ``|maximin - minimax|`` when computed.
    status : str
        ``"ok"``, ``"infeasible"`` or ``"undecided"``.
    """

    d_star: Optional[float]
    witness: Optional[AuxJoint]
    decoder: Optional[Kernel]
    gap: Optional[float] = None
    status: str = "ok"
    rate: float = 0.0
    minimax: Optional[float] = None

    def to_json(self) -> dict:
        return {"status": self.status, "rate": self.rate, "d_star": self.d_star, "gap": self.gap,
                "minimax": self.minimax,
                "witness": self.witness.to_json() if self.witness is not None else None,
                "decoder": self.decoder.to_json() if self.decoder is not None else None}


def _distortion(spec_or_table) -> np.ndarray:
    d = spec_or_table.distortion if isinstance(spec_or_table, ProblemSpec) else spec_or_table
    if d is None:
        raise ArgumentError("the game needs a distortion table")
    return np.asarray(d, dtype=float)


def inner_min(aux: AuxJoint, distortion, observed: Sequence[str] = ("W1", "Y")) -> tuple[float, Kernel]:
    """Bayes decoder and its expected distortion.

    For each positive-probability observation the decoder picks the action
    with the smallest expected distortion, ties going to the smallest index.
    Zero-probability observations get action 0.
    """
    d = _distortion(distortion)
    j = aux.joint
    obs = tuple(sorted(observed))
    p = j.marginal(("S",) + obs)
    m = np.moveaxis(np.asarray(p.mass), p.names.index("S"), -1)  # (*obs, S)
    scores = m @ d  # (*obs, V)
    choice = np.argmin(scores, axis=-1)
    pos = m.sum(axis=-1) > 0
    choice = np.where(pos, choice, 0)
    value = float(np.take_along_axis(scores, choice[..., None], axis=-1).sum())
    nv = d.shape[1]
    table = np.zeros(choice.shape + (nv,))
    np.put_along_axis(table, choice[..., None], 1.0, axis=-1)
    obs_axes = [j.axis(n) for n in obs]
    return value, Kernel(obs_axes, [Alphabet("V", nv)], table)


def _game_class(spec: ProblemSpec, cfg: SearchConfig):
    if spec.kind != "plain":
        raise ArgumentError("the game is defined on plain problems")
    _distortion(spec)
    cp = regions.class_program("no-action", spec, cfg.w1 or spec.aux_caps[0], 1, with_v=False)
    cp.equality = None
    return cp


def _objective(cp, spec):
    return InnerMin("S", ("W1", "Y"), _distortion(spec), [a.name for a in cp.axes])


def _start(cp) -> list:
    return [np.full(b.shape, 1.0 / b.n_cols) for b in cp.blocks]


def _solution(cp, spec, out: Outcome, r: float) -> GameSolution:
    best = regions.pick(out, cp)
    if best is None:
        status = "infeasible" if out.any_converged else "undecided"
        c = out.least_violating()
        aux = cp.aux(c.xs)
        value, dec = inner_min(aux, spec)
        return GameSolution(value, aux, dec, None, status, r)
    aux = cp.aux(best.xs)
    value, dec = inner_min(aux, spec)
    return GameSolution(value, aux, dec, None, "ok", r)


def solve_maximin(r: float, spec: ProblemSpec, search: Optional[SearchConfig] = None,
                  with_gap: bool = False) -> GameSolution:
    """Largest Bayes distortion the encoder can force at rate ``r``."""
    if not np.isfinite(r) or r < 0:
        raise ArgumentError(f"rate must be finite and >= 0, got {r!r}")
    cfg = search or SearchConfig()
    cp = _game_class(spec, cfg)
    cons = [("rate", RATE, r)] if r > 0 else []
    prog = cp.program(Negated(_objective(cp, spec)), cons, {"rate": RATE})
    if cfg.grid:
        out = grid_solve(prog, cfg)
    else:
        out = solve(prog, cfg, tag="game", starts=[_start(cp)])
    sol = _solution(cp, spec, out, r)
    if with_gap and sol.status == "ok":
        mm = solve_minimax(r, spec, cfg)
        sol.minimax = mm
        sol.gap = abs(mm - sol.d_star)
    return sol


def zero_rate_value(spec: ProblemSpec, search: Optional[SearchConfig] = None) -> GameSolution:
    """Game value without a rate constraint."""
    return solve_maximin(0.0, spec, search)


# ---------------------------------------------------------------------------
# Minimax side
# ---------------------------------------------------------------------------

def _payoff_rows(cp, spec, xs_list: list) -> np.ndarray:
    """Per-encoder coefficient vectors ``c[w1, y, v] = sum_s P(s,w1,y) d(s,v)``."""
    d = _distortion(spec)
    obj = _objective(cp, spec)
    prog = cp.program(obj)
    rows = []
    for xs in xs_list:
        from .search import Entropies
        ent = Entropies(prog.joint(xs), prog.names)
        rows.append(obj._scores(ent).reshape(len(xs[0]), -1))
    return np.concatenate(rows)


def _lp_decoder(c: np.ndarray, n_obs: int, n_v: int) -> tuple[float, np.ndarray]:
    """``min_delta max_e c_e . delta`` over row-stochastic decoders."""
    n = n_obs * n_v
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    a_ub = np.hstack([c, -np.ones((c.shape[0], 1))])
    b_ub = np.zeros(c.shape[0])
    a_eq = np.zeros((n_obs, n + 1))
    for o in range(n_obs):
        a_eq[o, o * n_v:(o + 1) * n_v] = 1.0
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.ones(n_obs),
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    if not res.success:
        raise ArgumentError(f"decoder LP failed: {res.message}")
    return float(res.x[-1]), res.x[:n].reshape(n_obs, n_v)


def solve_minimax(r: float, spec: ProblemSpec, search: Optional[SearchConfig] = None,
                  max_rounds: int = 30) -> float:
    """Smallest worst-case distortion over (mixed) decoders.

    In grid mode the encoder ranges over every rate-feasible grid point and
    the decoder problem is a linear program.  Otherwise encoders are added
    by best response (local search) until no encoder beats the current
    decoder by more than the feasibility tolerance.
    """
    cfg = search or SearchConfig()
    cp = _game_class(spec, cfg)
    d = _distortion(spec)
    n_v = d.shape[1]
    w1 = cp.blocks[0].shape[-1]
    n_obs = w1 * spec.alphabets["Y"]
    if cfg.grid:
        grids = [block_grid(b, cfg.grid_step) for b in cp.blocks]
        idx = np.stack(np.meshgrid(*[np.arange(len(g)) for g in grids], indexing="ij"), -1).reshape(-1, len(grids))
        xs = [g[idx[:, k]] for k, g in enumerate(grids)]
        prog = cp.program(RATE)
        rate = prog.report(xs)["objective"]
        keep = rate >= r - cfg.feas_tol if r > 0 else np.ones(len(rate), dtype=bool)
        if not keep.any():
            raise ArgumentError("no grid encoder attains the rate")
        c = _payoff_rows(cp, spec, [[x[keep] for x in xs]])
        return _lp_decoder(c, n_obs, n_v)[0]
    base = solve_maximin(r, spec, cfg)
    if base.status != "ok":
        raise ArgumentError(f"maximin search returned {base.status}")
    pool = [cp.lift(base.witness)]
    cons = [("rate", RATE, r)] if r > 0 else []
    value = base.d_star
    for rnd in range(max_rounds):
        c = _payoff_rows(cp, spec, [[x[None] for x in p] for p in pool])
        value, delta = _lp_decoder(c, n_obs, n_v)
        weights = _decoder_weights(cp, d, delta.reshape(w1, -1, n_v))
        prog = cp.program(Negated(Linear(weights)), cons)
        out = solve(prog, cfg.with_(seed=cfg.seed + rnd + 1), tag="game/best-response",
                    starts=[x for x in pool[-1:]])
        br = out.best()
        if br is None or -br.objective <= value + cfg.feas_tol:
            break
        pool.append(br.xs)
    return value


def _decoder_weights(cp, d: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Weights ``W[s, w1, y] = sum_v delta(v|w1,y) d(s,v)`` broadcast on the joint."""
    w = np.einsum("owv,sv->sow", delta, d)  # (S, W1, Y) in canonical order
    names = [a.name for a in cp.axes]
    shape = [a.size if a.name in ("S", "W1", "Y") else 1 for a in cp.axes]
    assert [n for n in names if n in ("S", "W1", "Y")] == ["S", "W1", "Y"]
    return w.reshape(shape)
