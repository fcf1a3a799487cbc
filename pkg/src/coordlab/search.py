"""Optimization over products of probability simplices.

Problems are stated as a :class:`Program`: a joint tensor that is the product
of a fixed factor and several free row-stochastic kernels, an objective to
minimize, lower-bound constraints on scalar terms, and an optional marginal
equality constraint.  Two solvers are provided:

* :func:`solve` runs many restarts at once (one batch axis) of a projected
  gradient method on an augmented Lagrangian.  The penalty weight grows by a
  constant factor per outer round and multipliers are updated in between.
* :func:`grid_solve` enumerates every kernel whose rows lie on a regular grid
  of the simplex.  It is exhaustive at the chosen resolution and serves as an
  oracle for small instances.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ArgumentError, CapacityError
from .probcore import Alphabet, Kernel, rng_stream

LN2 = math.log(2.0)
TINY = 1e-300
EXTRA_ROUNDS = 4


@dataclass(frozen=True)
class SearchConfig:
    """Settings shared by every search-based operation.

    Attributes
    ----------
    restarts : int
        Number of independent starts of the local optimizer.
    max_iter : int
        Projected-gradient iterations per outer round.
    outer_rounds : int
        Augmented-Lagrangian rounds; the penalty grows by ``penalty_growth``
        after each one.
    tol : float
        Convergence tolerance on the change of the penalized objective.
    feas_tol : float
        Tolerance on constraints and marginal gap when judging a solution.
    grid : bool
        Use the exhaustive grid instead of the local optimizer.
    grid_step : float
        Grid resolution; ``1 / grid_step`` must be an integer.
    w1, w2 : int, optional
        Auxiliary alphabet sizes; default to the problem's caps.
    threads : int
        Worker threads for restart chunks (0 = one per CPU).
    """

    restarts: int = 64
    max_iter: int = 300
    outer_rounds: int = 6
    penalty: float = 10.0
    penalty_growth: float = 10.0
    tol: float = 1e-7
    feas_tol: float = 1e-6
    seed: int = 0
    grid: bool = False
    grid_step: float = 0.25
    grid_cap: int = 20_000_000
    w1: Optional[int] = None
    w2: Optional[int] = None
    threads: int = 1

    def with_(self, **kw) -> "SearchConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Problem statement
# ---------------------------------------------------------------------------

class Block:
    """A free kernel ``K(target | given)`` embedded in the full joint."""

    def __init__(self, name: str, given: Sequence[Alphabet], target: Sequence[Alphabet],
                 full: Sequence[Alphabet]):
        self.name = name
        self.given = tuple(sorted(given))
        self.target = tuple(sorted(target))
        self.axes = tuple(sorted(self.given + self.target))
        self.shape = tuple(a.size for a in self.axes)
        self.tpos = [self.axes.index(a) for a in self.target]
        self.n_rows = math.prod(a.size for a in self.given)
        self.n_cols = math.prod(a.size for a in self.target)
        self.bshape = tuple(a.size if a in self.axes else 1 for a in full)
        self.sum_axes = tuple(1 + i for i, a in enumerate(full) if a not in self.axes)

    def rows_view(self, x: np.ndarray) -> np.ndarray:
        """``(B, *shape)`` -> ``(B, n_rows, n_cols)``."""
        m = np.moveaxis(x, [1 + p for p in self.tpos], list(range(-len(self.tpos), 0)))
        return m.reshape(x.shape[0], self.n_rows, self.n_cols)

    def from_rows(self, r: np.ndarray) -> np.ndarray:
        gs = [a.size for a in self.given]
        ts = [a.size for a in self.target]
        m = r.reshape((r.shape[0],) + tuple(gs + ts))
        src = list(range(1 + len(gs), 1 + len(gs) + len(ts)))
        return np.moveaxis(m, src, [1 + p for p in self.tpos])

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.from_rows(project_simplex(self.rows_view(x)))

    def expand(self, x: np.ndarray) -> np.ndarray:
        return x.reshape((x.shape[0],) + self.bshape)

    def kernel(self, x: np.ndarray) -> Kernel:
        """Kernel from one (unbatched) block tensor, rows renormalized."""
        r = self.rows_view(x[None])[0]
        r = np.maximum(r, 0.0)
        r = r / r.sum(axis=1, keepdims=True)
        t = self.from_rows(r[None])[0]
        return Kernel(self.axes_given_order(), self.target, np.transpose(t, self._perm()))

    def axes_given_order(self):
        return self.given

    def _perm(self):
        return [self.axes.index(a) for a in self.given + self.target]

    def from_kernel(self, k: Kernel) -> np.ndarray:
        table = k.table  # (given..., target...)
        order = list(k.from_axes + k.to_axes)
        return np.transpose(table, [order.index(a) for a in self.axes])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each last-axis row onto the probability simplex."""
    n = v.shape[-1]
    if n == 2:
        # closed form on the segment
        a = np.clip(0.5 * (1.0 + v[..., 0] - v[..., 1]), 0.0, 1.0)
        return np.stack([a, 1.0 - a], axis=-1)
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho + 1)[..., None]
    return np.maximum(v - theta, 0.0)


class Entropies:
    """Per-evaluation cache of marginal entropies of a batched joint."""

    def __init__(self, joint: np.ndarray, names: Sequence[str]):
        self.joint = joint
        self.names = tuple(names)
        self._m: dict = {}
        self._h: dict = {}
        self._dh: dict = {}

    def marginal(self, keep: frozenset) -> np.ndarray:
        if keep not in self._m:
            drop = tuple(1 + i for i, n in enumerate(self.names) if n not in keep)
            self._m[keep] = self.joint.sum(axis=drop, keepdims=True) if drop else self.joint
        return self._m[keep]

    def h(self, keep: frozenset) -> np.ndarray:
        if not keep:
            return np.zeros(self.joint.shape[0])
        if keep not in self._h:
            m = self.marginal(keep)
            lg = np.log2(np.maximum(m, TINY))
            self._h[keep] = -(m * lg).reshape(m.shape[0], -1).sum(axis=1)
        return self._h[keep]

    def dh(self, keep: frozenset) -> np.ndarray:
        if not keep:
            return np.zeros((1,) * self.joint.ndim)
        if keep not in self._dh:
            self._dh[keep] = -(np.log2(np.maximum(self.marginal(keep), 1e-30)) + 1.0 / LN2)
        return self._dh[keep]


class Quantity:
    """Linear combination of joint entropies ``sum_A c_A H(A)`` (bits)."""

    def __init__(self, coef: Optional[Mapping[frozenset, float]] = None, const: float = 0.0):
        self.coef = {k: v for k, v in (coef or {}).items() if v != 0}
        self.const = const

    @staticmethod
    def H(*names: str) -> "Quantity":
        return Quantity({frozenset(names): 1.0})

    @staticmethod
    def I(a, b, given=()) -> "Quantity":
        a, b, c = map(_tup, (a, b, given))
        H = Quantity.H
        return H(*a, *c) + H(*b, *c) - H(*a, *b, *c) - H(*c)

    def __add__(self, other: "Quantity") -> "Quantity":
        out = dict(self.coef)
        for k, v in other.coef.items():
            out[k] = out.get(k, 0.0) + v
        return Quantity(out, self.const + other.const)

    def __neg__(self) -> "Quantity":
        return Quantity({k: -v for k, v in self.coef.items()}, -self.const)

    def __sub__(self, other: "Quantity") -> "Quantity":
        return self + (-other)

    def __mul__(self, c: float) -> "Quantity":
        return Quantity({k: c * v for k, v in self.coef.items()}, c * self.const)

    __rmul__ = __mul__

    def value(self, ent: Entropies) -> np.ndarray:
        out = np.full(ent.joint.shape[0], self.const)
        for k, c in self.coef.items():
            out = out + c * ent.h(k)
        return out

    def grad(self, ent: Entropies) -> np.ndarray:
        g = np.zeros_like(ent.joint)
        for k, c in self.coef.items():
            g = g + c * ent.dh(k)
        return g


def _tup(x) -> tuple:
    return (x,) if isinstance(x, str) else tuple(x)


class InnerMin:
    """``sum_o min_v sum_s P(s, o) d(s, v)`` for observation axes ``o``.

    During optimization a soft minimum with temperature ``tau`` replaces the
    hard minimum so that the objective is differentiable; :meth:`exact`
    always uses the hard minimum.
    """

    def __init__(self, s_axis: str, obs: Sequence[str], d: np.ndarray, full: Sequence[str]):
        self.s_axis = s_axis
        self.obs = frozenset(obs)
        self.d = np.asarray(d, dtype=float)
        self.full = tuple(full)
        self.tau = 0.0
        self._keep = self.obs | {s_axis}
        self._s_pos = 1 + sorted(self._keep).index(s_axis)

    def _scores(self, ent: Entropies) -> np.ndarray:
        m = ent.marginal(self._keep)  # broadcastable (B, ...) with unit dims elsewhere
        m = np.squeeze(m, axis=tuple(1 + i for i, n in enumerate(self.full) if n not in self._keep))
        m = np.moveaxis(m, self._s_pos, -1)  # (B, *obs, S)
        return m @ self.d  # (B, *obs, V)

    def value(self, ent: Entropies) -> np.ndarray:
        a = self._scores(ent)
        if self.tau > 0:
            return self._soft(a)[0].reshape(a.shape[0], -1).sum(axis=1)
        return a.min(axis=-1).reshape(a.shape[0], -1).sum(axis=1)

    def _soft(self, a: np.ndarray):
        z = -a / self.tau
        zmax = z.max(axis=-1, keepdims=True)
        w = np.exp(z - zmax)
        sw = w.sum(axis=-1, keepdims=True)
        val = -self.tau * (np.log(sw[..., 0]) + zmax[..., 0])
        return val, w / sw

    def grad(self, ent: Entropies) -> np.ndarray:
        a = self._scores(ent)
        if self.tau > 0:
            wts = self._soft(a)[1]
        else:
            wts = np.zeros_like(a)
            np.put_along_axis(wts, a.argmin(axis=-1)[..., None], 1.0, axis=-1)
        gs = wts @ self.d.T  # (B, *obs, S)
        gs = np.moveaxis(gs, -1, self._s_pos)
        shape = (gs.shape[0],) + tuple(ent.joint.shape[1 + i] if n in self._keep else 1
                                       for i, n in enumerate(self.full))
        return np.broadcast_to(gs.reshape(shape), ent.joint.shape)


class Negated:
    """Objective wrapper turning a maximization into a minimization."""

    def __init__(self, term):
        self.term = term

    def value(self, ent):
        return -self.term.value(ent)

    def grad(self, ent):
        return -self.term.grad(ent)


@dataclass
class Program:
    """Minimize ``objective`` s.t. ``term >= lower`` and a marginal equality.

    Attributes
    ----------
    axes : list of Alphabet
        Axes of the full joint in canonical order.
    fixed : ndarray
        Fixed factor broadcastable to the full joint shape.
    blocks : list of Block
        Free kernels.
    objective : Quantity or InnerMin or Negated
    constraints : list of (name, term, lower)
    equality : (tuple of str, ndarray) or None
        Observed axes and their target marginal (shape in canonical order of
        those axes).
    terms : dict of str to term
        Extra scalar terms reported for every solution.
    """

    axes: list
    fixed: np.ndarray
    blocks: list
    objective: object
    constraints: list = field(default_factory=list)
    equality: Optional[tuple] = None
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = tuple(a.name for a in self.axes)
        self.shape = tuple(a.size for a in self.axes)
        if self.equality is not None:
            obs, target = self.equality
            self._obs = frozenset(obs)
            tshape = tuple(a.size if a.name in self._obs else 1 for a in self.axes)
            self._target = np.asarray(target, dtype=float).reshape((1,) + tshape)

    # -- evaluation -----------------------------------------------------
    def joint(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        j = self.fixed[None]
        for b, x in zip(self.blocks, xs):
            j = j * b.expand(x)
        return j

    def residual(self, ent: Entropies) -> Optional[np.ndarray]:
        if self.equality is None:
            return None
        return ent.marginal(self._obs) - self._target

    def gap(self, ent: Entropies) -> np.ndarray:
        r = self.residual(ent)
        if r is None:
            return np.zeros(ent.joint.shape[0])
        return np.abs(r).reshape(r.shape[0], -1).sum(axis=1)

    def report(self, xs: Sequence[np.ndarray]) -> dict:
        """Exact objective, constraint terms, extra terms and gap (batched)."""
        ent = Entropies(self.joint(xs), self.names)
        for t in self._smooth_terms():
            t.tau = 0.0
        out = {"objective": self.objective.value(ent), "gap": self.gap(ent)}
        for name, term, _ in self.constraints:
            out[name] = term.value(ent)
        for name, term in self.terms.items():
            out[name] = term.value(ent)
        return out

    def violation(self, rep: dict) -> np.ndarray:
        v = rep["gap"].copy()
        for name, _, lo in self.constraints:
            v = np.maximum(v, lo - rep[name])
        return v

    def _smooth_terms(self):
        out = []
        for t in [self.objective] + [c[1] for c in self.constraints]:
            t = t.term if isinstance(t, Negated) else t
            if isinstance(t, InnerMin):
                out.append(t)
        return out


# ---------------------------------------------------------------------------
# Local solver
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    """One solution produced by a solver (unbatched block tensors)."""

    xs: list
    objective: float
    values: dict
    gap: float
    violation: float
    converged: bool
    index: int


@dataclass
class Outcome:
    candidates: list
    feas_tol: float

    @property
    def feasible(self) -> list:
        return [c for c in self.candidates if c.violation <= self.feas_tol]

    @property
    def any_converged(self) -> bool:
        return any(c.converged for c in self.candidates)

    def best(self, key: Optional[Callable[[Candidate], str]] = None, tie: float = 1e-9) -> Optional[Candidate]:
        """Best feasible candidate: lowest objective, then smallest ``key``."""
        feas = self.feasible
        if not feas:
            return None
        lo = min(c.objective for c in feas)
        near = [c for c in feas if c.objective <= lo + tie]
        if key is None or len(near) == 1:
            return min(near, key=lambda c: (c.objective, c.index))
        return min(near, key=lambda c: (key(c), c.index))

    def least_violating(self) -> Candidate:
        return min(self.candidates, key=lambda c: (c.violation, c.objective, c.index))


class _AL:
    """Augmented Lagrangian of a program for a batch of restarts."""

    def __init__(self, prog: Program, batch: int, mu: float):
        self.p = prog
        self.mu = mu
        self.lam = np.zeros((batch, len(prog.constraints)))
        # constraints are measured relative to their own bound
        self.scale = [max(abs(lo), 0.01) for _, _, lo in prog.constraints]
        self.nu = None
        if prog.equality is not None:
            self.nu = np.zeros((batch,) + prog._target.shape[1:])

    def value(self, xs, rows=None, need_grad=False):
        p = self.p
        J = p.joint(xs)
        ent = Entropies(J, p.names)
        lam = self.lam if rows is None else self.lam[rows]
        f = p.objective.value(ent)
        G = p.objective.grad(ent) if need_grad else None
        for i, (_, term, lo) in enumerate(p.constraints):
            sc = self.scale[i]
            g = (lo - term.value(ent)) / sc
            a = np.maximum(0.0, lam[:, i] + self.mu * g)
            f = f + (a * a - lam[:, i] ** 2) / (2 * self.mu)
            if need_grad:
                G = G - (a / sc).reshape((-1,) + (1,) * (J.ndim - 1)) * term.grad(ent)
        if p.equality is not None:
            nu = self.nu if rows is None else self.nu[rows]
            h = p.residual(ent)
            f = f + ((nu + 0.5 * self.mu * h) * h).reshape(h.shape[0], -1).sum(axis=1)
            if need_grad:
                G = G + np.broadcast_to(nu + self.mu * h, J.shape)
        if not need_grad:
            return f, None
        grads = []
        for k, b in enumerate(p.blocks):
            others = p.fixed[None]
            for j, (bj, xj) in enumerate(zip(p.blocks, xs)):
                if j != k:
                    others = others * bj.expand(xj)
            gk = (G * others).sum(axis=b.sum_axes) if b.sum_axes else G * others
            grads.append(gk.reshape((J.shape[0],) + b.shape))
        return f, grads

    def update(self, xs):
        p = self.p
        ent = Entropies(p.joint(xs), p.names)
        for i, (_, term, lo) in enumerate(p.constraints):
            g = (lo - term.value(ent)) / self.scale[i]
            self.lam[:, i] = np.maximum(0.0, self.lam[:, i] + self.mu * g)
        if p.equality is not None:
            self.nu = self.nu + self.mu * p.residual(ent)


def _inner(al: _AL, xs: list, cfg: SearchConfig) -> tuple[list, np.ndarray]:
    """Projected gradient with backtracking; returns iterate and convergence mask."""
    B = xs[0].shape[0]
    blocks = al.p.blocks
    t = np.ones(B)
    active = np.ones(B, dtype=bool)
    conv = np.zeros(B, dtype=bool)
    f, gs = al.value(xs, need_grad=True)
    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa = [x[idx] for x in xs]
        ga = [g[idx] for g in gs]
        fa = f[idx]
        ta = t[idx]
        pending = np.ones(idx.size, dtype=bool)
        new_x = [x.copy() for x in xa]
        new_f = fa.copy()
        for _ls in range(40):
            tb = ta.reshape((-1,) + (1,) * (xa[0].ndim - 1))
            trial = [b.project(x - ta.reshape((-1,) + (1,) * (x.ndim - 1)) * g)
                     for b, x, g in zip(blocks, xa, ga)]
            del tb
            rows = idx
            ft, _ = al.value(trial, rows=rows)
            lin = np.zeros(idx.size)
            quad = np.zeros(idx.size)
            for x, xt, g in zip(xa, trial, ga):
                d = (xt - x).reshape(idx.size, -1)
                lin += (g.reshape(idx.size, -1) * d).sum(axis=1)
                quad += (d * d).sum(axis=1)
            ok = pending & (ft <= fa + lin + quad / (2 * ta) + 1e-15 * (1 + np.abs(fa)))
            for k in range(len(xs)):
                new_x[k][ok] = trial[k][ok]
            new_f[ok] = ft[ok]
            pending &= ~ok
            if not pending.any():
                break
            ta = np.where(pending, ta * 0.5, ta)
        moved = ~pending
        df = fa - new_f
        for k in range(len(xs)):
            xs[k][idx] = new_x[k]
        f[idx] = new_f
        done = (moved & (np.abs(df) <= cfg.tol)) | (ta < 1e-14)
        conv[idx[done]] = True
        active[idx[done]] = False
        keep = ~done
        still = idx[keep]
        t[idx] = np.where(moved, np.minimum(ta * 2.0, 1e6), ta)
        if still.size:
            _, g_new = al.value([x[still] for x in xs], rows=still, need_grad=True)
            # Barzilai-Borwein step from the last move, backtracking keeps it safe
            ss = np.zeros(still.size)
            sy = np.zeros(still.size)
            for k in range(len(xs)):
                d = (new_x[k][keep] - xa[k][keep]).reshape(still.size, -1)
                y = (g_new[k] - ga[k][keep]).reshape(still.size, -1)
                ss += (d * d).sum(axis=1)
                sy += (d * y).sum(axis=1)
                gs[k][still] = g_new[k]
            bb = np.where(sy > 1e-18, ss / np.maximum(sy, 1e-18), t[still])
            t[still] = np.where(moved[keep], np.clip(bb, 1e-10, 1e6), t[still])
    return xs, conv


def _run_chunk(prog: Program, starts: list, cfg: SearchConfig) -> tuple[list, np.ndarray]:
    xs = [s.copy() for s in starts]
    B = xs[0].shape[0]
    al = _AL(prog, B, cfg.penalty)
    conv = np.zeros(B, dtype=bool)
    smooth = prog._smooth_terms()
    for rnd in range(cfg.outer_rounds + EXTRA_ROUNDS):
        if rnd >= cfg.outer_rounds:
            # keep tightening only while some restart is close to feasible
            viol = prog.violation(prog.report(xs))
            if not np.any((viol > 0.1 * cfg.feas_tol) & (viol < 1e-2)):
                break
        for t in smooth:
            t.tau = 0.05 * (0.1 ** rnd) if rnd < cfg.outer_rounds - 1 else 1e-6
        xs, conv = _inner(al, xs, cfg)
        al.update(xs)
        al.mu *= cfg.penalty_growth
    return xs, conv


def random_starts(prog: Program, n: int, seed: int, tag: str) -> list:
    """Dirichlet(1) rows for every block; restart ``i`` uses its own stream."""
    out = [np.empty((n,) + b.shape) for b in prog.blocks]
    for i in range(n):
        rng = rng_stream(seed, f"{tag}/restart/{i}")
        for k, b in enumerate(prog.blocks):
            rows = rng.dirichlet(np.ones(b.n_cols), size=b.n_rows)
            out[k][i] = b.from_rows(rows[None])[0]
    return out


def solve(prog: Program, cfg: SearchConfig, *, tag: str = "search", starts: Sequence[Sequence[np.ndarray]] = ()) -> Outcome:
    """Multi-start augmented-Lagrangian projected gradient.

    ``starts`` are explicit initial points (lists of block tensors) used for
    the first restarts; the remaining restarts are random.
    """
    n = max(cfg.restarts, len(starts), 1)
    init = random_starts(prog, n, cfg.seed, tag)
    for i, st in enumerate(starts):
        for k, x in enumerate(st):
            init[k][i] = prog.blocks[k].project(np.asarray(x, dtype=float)[None])[0]
    threads = cfg.threads if cfg.threads > 0 else (len(os.sched_getaffinity(0)) or 1)
    chunk = max(1, -(-n // threads))
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    def work(b):
        a, z = b
        progc = _clone_smooth(prog)
        return _run_chunk(progc, [x[a:z] for x in init], cfg)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    xs = [np.concatenate([p[0][k] for p in parts]) for k in range(len(prog.blocks))]
    conv = np.concatenate([p[1] for p in parts])
    return collect(prog, xs, conv, cfg.feas_tol)


def _clone_smooth(prog: Program) -> Program:
    """Copy of ``prog`` with private smoothing state (safe across threads)."""
    import copy
    out = copy.copy(prog)
    if isinstance(prog.objective, Negated) and isinstance(prog.objective.term, InnerMin):
        out.objective = Negated(copy.copy(prog.objective.term))
    elif isinstance(prog.objective, InnerMin):
        out.objective = copy.copy(prog.objective)
    return out


def collect(prog: Program, xs: list, conv: np.ndarray, feas_tol: float) -> Outcome:
    rep = prog.report(xs)
    viol = prog.violation(rep)
    cands = []
    for i in range(xs[0].shape[0]):
        vals = {k: float(v[i]) for k, v in rep.items()}
        cands.append(Candidate([x[i].copy() for x in xs], vals["objective"], vals, vals["gap"],
                               float(viol[i]), bool(conv[i]), i))
    return Outcome(cands, feas_tol)


# ---------------------------------------------------------------------------
# Exhaustive grid
# ---------------------------------------------------------------------------

def simplex_grid(n: int, step: float) -> np.ndarray:
    """All points of the ``n``-simplex with coordinates in multiples of ``step``."""
    k = round(1.0 / step)
    if abs(k * step - 1.0) > 1e-12:
        raise ArgumentError("1/grid_step must be an integer")
    pts = []
    for c in itertools.combinations(range(k + n - 1), n - 1):
        prev, comp = -1, []
        for b in c:
            comp.append(b - prev - 1)
            prev = b
        comp.append(k + n - 2 - prev)
        pts.append(comp)
    return np.array(pts, dtype=float) / k


def block_grid(b: Block, step: float) -> np.ndarray:
    """All grid kernels of a block, shape ``(count, *b.shape)``."""
    pts = simplex_grid(b.n_cols, step)
    idx = np.array(list(itertools.product(range(len(pts)), repeat=b.n_rows)), dtype=np.int64)
    rows = pts[idx]  # (count, n_rows, n_cols)
    return b.from_rows(rows)


def grid_count(prog: Program, step: float) -> int:
    p = 1
    for b in prog.blocks:
        p *= math.comb(round(1 / step) + b.n_cols - 1, b.n_cols - 1) ** b.n_rows
    return p


@dataclass
class GridTable:
    """Vectorized report of every grid point of a program."""

    grids: list
    shape: tuple
    values: dict
    violation: np.ndarray

    def point(self, flat: int) -> list:
        idx = np.unravel_index(flat, self.shape)
        return [g[i] for g, i in zip(self.grids, idx)]


def grid_table(prog: Program, step: float, cap: int, chunk: int = 16384) -> GridTable:
    """Evaluate ``prog.report`` on the full grid."""
    total = grid_count(prog, step)
    if total > cap:
        raise CapacityError(f"grid has {total} points, above the cap of {cap}")
    grids = [block_grid(b, step) for b in prog.blocks]
    shape = tuple(len(g) for g in grids)
    out: dict = {}
    for a in range(0, total, chunk):
        flat = np.arange(a, min(a + chunk, total))
        idx = np.unravel_index(flat, shape)
        xs = [g[i] for g, i in zip(grids, idx)]
        rep = prog.report(xs)
        for k, v in rep.items():
            out.setdefault(k, []).append(v)
    values = {k: np.concatenate(v) for k, v in out.items()}
    viol = prog.violation(values)
    return GridTable(grids, shape, values, viol)


def grid_solve(prog: Program, cfg: SearchConfig) -> Outcome:
    """Best grid point for ``prog`` (plus the least violating one)."""
    tab = grid_table(prog, cfg.grid_step, cfg.grid_cap)
    return outcome_from_table(tab, cfg.feas_tol)


def outcome_from_table(tab: GridTable, feas_tol: float, objective: Optional[np.ndarray] = None,
                       violation: Optional[np.ndarray] = None) -> Outcome:
    obj = tab.values["objective"] if objective is None else objective
    viol = tab.violation if violation is None else violation
    picks = []
    feas = viol <= feas_tol
    if feas.any():
        masked = np.where(feas, obj, np.inf)
        lo = masked.min()
        picks.extend(np.flatnonzero(masked <= lo + 1e-9)[:8].tolist())
    picks.append(int(np.argmin(viol)))
    cands = []
    for i in dict.fromkeys(picks):
        vals = {k: float(v[i]) for k, v in tab.values.items()}
        vals["objective"] = float(obj[i])
        cands.append(Candidate(tab.point(i), float(obj[i]), vals, vals["gap"], float(viol[i]), True, int(i)))
    return Outcome(cands, feas_tol)


class Linear:
    """``sum_cells W * P`` for a fixed weight tensor broadcast on the joint."""

    def __init__(self, weights: np.ndarray):
        self.w = np.asarray(weights, dtype=float)

    def value(self, ent: Entropies) -> np.ndarray:
        p = ent.joint * self.w[None]
        return p.reshape(p.shape[0], -1).sum(axis=1)

    def grad(self, ent: Entropies) -> np.ndarray:
        return np.broadcast_to(self.w[None], ent.joint.shape)
