"""Rate-leakage regions: constraint values, achievability and boundaries.

Every variant is described by four information quantities of its auxiliary
joint: a lower bound on the leakage ``E``, the upper bound ``H`` of the state
block, the cap on ``R + E`` and an ``R``-only cap.  They are defined once as
symbolic :class:`~coordlab.search.Quantity` objects so that the exact report
of a fixed aux and the optimizer work from the same formulas.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model
from .errors import ArgumentError
from .model import AuxJoint, ProblemSpec
from .probcore import Alphabet, JointDist, Kernel
from .search import (Block, Entropies, Outcome, Program, Quantity, SearchConfig, collect, grid_solve,
                     solve)

BOUNDARY_TOL = 1e-6

H, I = Quantity.H, Quantity.I


@dataclass(frozen=True)
class RatePoint:
    """A pair (R, E) of message rate and state leakage, in bits."""

    r: float
    e: float

    def __post_init__(self):
        for name in ("r", "e"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ArgumentError(f"rate point field {name} must be finite and >= 0, got {v!r}")


@dataclass
class RegionReport:
    """Constraint values of one aux (bits) and optionally a verdict."""

    e_lower: float
    e_upper: float
    re_sum_cap: float
    r_remark_cap: float
    feasible: Optional[bool] = None
    variant: str = "causal"
    point: Optional[RatePoint] = None

    def to_json(self) -> dict:
        out = {"variant": self.variant, "e_lower": self.e_lower, "e_upper": self.e_upper,
               "re_sum_cap": self.re_sum_cap, "r_remark_cap": self.r_remark_cap,
               "feasible": self.feasible}
        if self.point is not None:
            out["rate"] = self.point.r
            out["leakage"] = self.point.e
        return out

    def check(self, point: RatePoint, tol: float = BOUNDARY_TOL) -> bool:
        """Whether ``point`` satisfies this aux's constraints within ``tol``."""
        ok = (self.e_lower <= point.e + tol and point.e <= self.e_upper + tol
              and point.r + point.e <= self.re_sum_cap + tol)
        if self.variant == "feedback":
            ok = ok and point.r <= self.r_remark_cap + tol
        return ok


# ---------------------------------------------------------------------------
# Per-variant quantities
# ---------------------------------------------------------------------------

def quantities(variant: str) -> dict[str, Quantity]:
    """Symbolic constraint quantities of a variant.

    Keys are ``e_lower``, ``e_upper``, ``re_sum_cap`` and ``r_cap``.  For all
    variants except feedback, ``r_cap`` equals ``re_sum_cap - e_lower`` on any
    aux of the class (a consequence of the class's Markov chains).
    """
    if variant == "causal":
        return {"e_lower": I("S", ("W1", "W2", "Y")), "e_upper": H("S"),
                "re_sum_cap": I(("W1", "S"), "Y"),
                "r_cap": I(("W1", "W2"), "Y") - I("W2", "S", "W1")}
    if variant == "no-action":
        return {"e_lower": I("S", ("W1", "Y")), "e_upper": H("S"),
                "re_sum_cap": I(("W1", "S"), "Y"), "r_cap": I("W1", "Y")}
    if variant == "two-sided":
        st, out = ("U", "S"), ("Y", "Z")
        return {"e_lower": I(st, ("W1", "W2") + out), "e_upper": H(*st),
                "re_sum_cap": I(("W1",) + st, out),
                "r_cap": I(("W1", "W2"), out) - I("W2", st, "W1")}
    if variant == "feedback":
        return {"e_lower": I("S", ("W1", "W2", "Y1")), "e_upper": H("S"),
                "re_sum_cap": I(("W1", "S"), "Y1"),
                "r_cap": I(("W1", "W2"), "Y1") - I("W2", ("S", "Y2"), "W1")}
    if variant == "strictly-causal":
        return {"e_lower": I("S", ("X", "W2", "Y")), "e_upper": H("S"),
                "re_sum_cap": I(("X", "S"), "Y"),
                "r_cap": I(("X", "W2"), "Y") - I("W2", "S", "X")}
    if variant == "corollary":
        return {"e_lower": I("S", "Y", "X"), "e_upper": H("S"),
                "re_sum_cap": I(("X", "S"), "Y"), "r_cap": I("X", "Y")}
    raise ArgumentError(f"unknown variant {variant!r}; choose from {model.VARIANTS}")


def evaluate(q: Quantity, joint: JointDist) -> float:
    """Exact value of a symbolic quantity on a joint (bits)."""
    ent = Entropies(np.asarray(joint.mass)[None], joint.names)
    return float(q.value(ent)[0])


def constraints(variant: str, aux: AuxJoint) -> RegionReport:
    """Constraint values of ``aux`` for ``variant``.

    Values are clamped at zero; the raw ``R`` cap can be negative for aux
    whose ``W2`` describes more of the state than the channel can carry.
    """
    if aux.variant != variant:
        raise ArgumentError(f"aux belongs to variant {aux.variant!r}, not {variant!r}")
    qs = quantities(variant)
    v = {k: max(0.0, evaluate(q, aux.joint)) for k, q in qs.items()}
    return RegionReport(v["e_lower"], v["e_upper"], v["re_sum_cap"], v["r_cap"], None, variant)


# ---------------------------------------------------------------------------
# Programs over an auxiliary class
# ---------------------------------------------------------------------------

@dataclass
class ClassProgram:
    """A variant's auxiliary class laid out for the optimizer."""

    variant: str
    spec: ProblemSpec
    axes: list
    fixed: np.ndarray
    blocks: list
    equality: Optional[tuple]

    def program(self, objective, constraints=(), terms=None) -> Program:
        return Program(self.axes, self.fixed, self.blocks, objective, list(constraints),
                       self.equality, dict(terms or {}))

    def aux(self, xs) -> AuxJoint:
        factors = {b.name: b.kernel(x) for b, x in zip(self.blocks, xs)}
        return model.compose_aux(self.variant, factors, self.spec)

    def lift(self, aux: AuxJoint) -> list:
        return [b.from_kernel(aux.factors[b.name]) for b in self.blocks]


def embed(table_axes, table: np.ndarray, full) -> np.ndarray:
    """Reshape a table over ``table_axes`` (in that order) to broadcast on ``full``."""
    order = sorted(table_axes)
    t = np.transpose(np.asarray(table), [list(table_axes).index(a) for a in order])
    return t.reshape([a.size if a in order else 1 for a in full])


def class_program(variant: str, spec: ProblemSpec, w1: Optional[int] = None,
                  w2: Optional[int] = None, with_v: Optional[bool] = None) -> ClassProgram:
    """Lay out the factorization of ``variant`` on ``spec``.

    ``with_v=False`` drops the receiver action even if the problem targets it.
    """
    if with_v is False and spec.target_v is not None:
        spec = ProblemSpec(dict(spec.alphabets), spec.source, spec.channel, spec.target_x, None,
                           spec.distortion, spec.aux_caps)
    w1 = int(w1 or spec.aux_caps[0])
    w2 = int(w2 or spec.aux_caps[1])
    if variant == "no-action":
        w2 = 1
    chain, obs = model.variant_layout(variant, spec)
    specs = [c for c in chain if isinstance(c, model.FactorSpec)]
    used = set(spec.source.names) | set(spec.channel.from_names) | set(spec.channel.to_names)
    for fs in specs:
        used |= set(fs.given) | set(fs.target)
    if variant == "no-action":
        used.add("W2")
    sizes = dict(spec.alphabets, W1=w1, W2=w2)
    full = sorted(Alphabet(n, sizes[n]) for n in used)
    fixed = embed(spec.source.axes, spec.source.mass, full) * embed(
        spec.channel.from_axes + spec.channel.to_axes, spec.channel.table, full)
    blocks = []
    for fs in specs:
        given = [Alphabet(n, sizes[n]) for n in fs.given]
        target = [Alphabet(n, sizes[n]) for n in fs.target]
        blocks.append(Block(fs.name, given, target, full))
    equality = None
    if obs:
        tgt = spec.target_joint().marginal(obs)
        equality = (tgt.names, np.asarray(tgt.mass))
    return ClassProgram(variant, spec, full, fixed, blocks, equality)


def target_start(cp: ClassProgram) -> list:
    """Start that ignores the auxiliaries and follows the targets."""
    spec = cp.spec
    target = spec.target_joint()
    xs = []
    for b in cp.blocks:
        if b.name in ("q_w1", "q_w2"):
            xs.append(np.full(b.shape, 1.0 / b.n_cols))
            continue
        seen = [a.name for a in b.given if not a.name.startswith("W")]
        tname = b.target[0].name
        if b.name == "q_x" and not seen:
            k = Kernel((), b.target, target.marginal(tname).mass)
        else:
            k = target.conditional(tname, seen)
        k = model.widen(k, [a for a in b.given if a.name.startswith("W")])
        xs.append(b.from_kernel(k))
    return xs


def _corner_coupling(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Northwest-corner joint with marginals ``p`` (rows) and ``q`` (columns)."""
    out = np.zeros((len(p), len(q)))
    p, q = p.astype(float).copy(), q.astype(float).copy()
    i = j = 0
    while i < len(p) and j < len(q):
        m = min(p[i], q[j])
        out[i, j] = m
        p[i] -= m
        q[j] -= m
        if p[i] <= 1e-15:
            i += 1
        else:
            j += 1
    return out


def coupling_starts(cp: ClassProgram) -> list:
    """Starts in which ``X`` follows ``W1`` as closely as the targets allow.

    For each candidate ``Q_W1`` (uniform, or a row of ``target_x`` when
    ``|W1| = |X|``) every conditioning row of ``Q_{X|...,W1}`` is the
    corner coupling of ``Q_W1`` with the target row, so the ``X`` marginal
    matches exactly.  ``W2`` is either constant or a copy of ``S``.  These
    points sit at vertices the gradient from a product start cannot reach
    (dependence between ``W1`` and ``X`` has zero gradient at independence).
    """
    names = [b.name for b in cp.blocks]
    if "q_w1" not in names or "q_x" not in names:
        return []
    bw1, bx = cp.blocks[names.index("q_w1")], cp.blocks[names.index("q_x")]
    if bw1.given or "W1" not in [a.name for a in bx.given] or len(bx.target) != 1:
        return []
    base = target_start(cp)
    seen = [a for a in bx.given if a.name != "W1"]
    kx = cp.spec.target_joint().conditional(bx.target[0].name, [a.name for a in seen])
    rows = np.asarray(kx.table).reshape(-1, bx.n_cols)  # one row per seen config
    kw = bw1.n_cols
    cands = [np.full(kw, 1.0 / kw)]
    if kw == bx.n_cols:
        cands += [r for r in rows]
    w2_opts = [None]
    if "q_w2" in names:
        bw2 = cp.blocks[names.index("q_w2")]
        gn = [a.name for a in bw2.given]
        tab = np.zeros((bw2.n_rows, bw2.n_cols))
        tab[:, 0] = 1.0
        w2_opts = [bw2.from_rows(tab[None])[0]]
        if "S" in gn and bw2.n_cols >= cp.spec.alphabets["S"]:
            idx = np.array(list(np.ndindex(*[a.size for a in bw2.given])))
            cp_tab = np.zeros((bw2.n_rows, bw2.n_cols))
            cp_tab[np.arange(bw2.n_rows), idx[:, gn.index("S")]] = 1.0
            w2_opts.append(bw2.from_rows(cp_tab[None])[0])
    wpos = [a.name for a in bx.given].index("W1")
    out = []
    for qw in cands:
        qx = np.zeros((bx.n_rows, bx.n_cols))
        for r, cfg in enumerate(np.ndindex(*[a.size for a in bx.given])):
            w = cfg[wpos]
            srow = list(cfg[:wpos] + cfg[wpos + 1:])
            k = np.ravel_multi_index(srow, [a.size for a in seen]) if seen else 0
            pi = _corner_coupling(qw, rows[k])
            qx[r] = pi[w] / qw[w] if qw[w] > 0 else rows[k]
        for w2 in w2_opts:
            xs = list(base)
            xs[names.index("q_w1")] = qw.reshape(bw1.shape)
            xs[names.index("q_x")] = bx.from_rows(qx[None])[0]
            if w2 is not None:
                xs[names.index("q_w2")] = w2
            out.append(xs)
    return out


def _sizes(spec: ProblemSpec, cfg: SearchConfig) -> tuple[int, int]:
    return (cfg.w1 or spec.aux_caps[0], cfg.w2 or spec.aux_caps[1])


def run(prog: Program, cp: ClassProgram, cfg: SearchConfig, tag: str) -> Outcome:
    if cfg.grid:
        return grid_solve(prog, cfg)
    return solve(prog, cfg, tag=tag, starts=[target_start(cp)] + coupling_starts(cp))


def rescue(prog: Program, cp: ClassProgram, cfg: SearchConfig, tag: str, phase1) -> Outcome:
    """Retry a program whose restarts all ended infeasible.

    ``phase1`` is a quantity whose maximization drives the search into the
    feasible set; its best point becomes an explicit start.  The returned
    outcome pools the retry with that point itself.
    """
    lift = solve(cp.program(-phase1), cfg, tag=tag + "-phase1",
                 starts=[target_start(cp)] + coupling_starts(cp)).best()
    if lift is None:
        return Outcome([], cfg.feas_tol)
    out = solve(prog, cfg, tag=tag + "-retry", starts=[target_start(cp), lift.xs])
    seed = collect(prog, [x[None] for x in lift.xs], np.array([True]), cfg.feas_tol)
    return merge(out, seed)


def merge(*outs: Outcome) -> Outcome:
    """Pool outcomes, renumbering candidates so indices stay unique."""
    cands = [dataclasses.replace(c, index=i) for i, c in enumerate(c for o in outs for c in o.candidates)]
    return Outcome(cands, outs[0].feas_tol)


def pick(out: Outcome, cp: ClassProgram):
    """Best feasible candidate with the serialized-aux tie rule."""
    cache: dict = {}

    def key(c):
        if c.index not in cache:
            cache[c.index] = cp.aux(c.xs).dumps()
        return cache[c.index]

    return out.best(key=key)


# ---------------------------------------------------------------------------
# Achievability and minimal leakage
# ---------------------------------------------------------------------------

@dataclass
class Decision:
    """Outcome of :func:`is_achievable`.

    ``status`` is ``"achievable"``, ``"not-achievable"``, ``"boundary"`` or
    ``"undecided"``; ``achievable`` is the matching bool (None otherwise).
    ``witness`` is the best feasible aux found and ``certificate`` the least
    violating one with its per-constraint slack (positive = satisfied).
    """

    status: str
    point: RatePoint
    e_star: Optional[float] = None
    witness: Optional[AuxJoint] = None
    certificate: Optional[AuxJoint] = None
    slack: dict = field(default_factory=dict)
    report: Optional[RegionReport] = None
    note: str = ""

    @property
    def achievable(self) -> Optional[bool]:
        return {"achievable": True, "not-achievable": False}.get(self.status)

    def __iter__(self):
        yield self.achievable
        yield self.witness if self.witness is not None and self.status == "achievable" else self.certificate

    def to_json(self) -> dict:
        out: dict = {"status": self.status, "rate": self.point.r, "leakage": self.point.e,
                     "e_star": self.e_star, "slack": self.slack, "note": self.note}
        if self.report is not None:
            out["report"] = self.report.to_json()
        for k in ("witness", "certificate"):
            a = getattr(self, k)
            out[k] = a.to_json() if a is not None else None
        return out


def _slack(variant: str, aux: AuxJoint, spec: ProblemSpec, point: RatePoint) -> dict:
    rep = constraints(variant, aux)
    out = {"leakage_lower": point.e - rep.e_lower, "leakage_upper": rep.e_upper - point.e,
           "sum_rate": rep.re_sum_cap - point.r - point.e,
           "marginal_gap": -model.marginal_gap(aux, spec)}
    if variant == "feedback":
        out["rate"] = rep.r_remark_cap - point.r
    return out


def is_achievable(variant: str, point: RatePoint, spec: ProblemSpec,
                  search: Optional[SearchConfig] = None) -> Decision:
    """Decide whether ``(R, E)`` lies in the variant's region.

    The search minimizes the leakage lower bound subject to the sum-rate
    constraint ``R + E <= cap`` and marginal matching; the point is
    achievable iff that minimum is at most ``E``.  Results within
    ``1e-6`` of ``E`` are reported as ``"boundary"``.
    """
    cfg = search or SearchConfig()
    h_state = _state_entropy(variant, spec)
    if point.e > h_state + BOUNDARY_TOL:
        return Decision("not-achievable", point, note=f"E exceeds H = {h_state:.6g} with no search")
    w1, w2 = _sizes(spec, cfg)
    cp = class_program(variant, spec, w1, w2)
    qs = quantities(variant)
    cons = [("re_sum_cap", qs["re_sum_cap"], point.r + point.e)]
    if variant == "feedback":
        cons.append(("r_cap", qs["r_cap"], point.r))
    prog = cp.program(qs["e_lower"], cons, {"e_upper": qs["e_upper"]})
    out = run(prog, cp, cfg, "achievable")
    best = pick(out, cp)
    if best is None and not cfg.grid and out.any_converged:
        out = merge(out, rescue(prog, cp, cfg, "achievable", qs["re_sum_cap"]))
        best = pick(out, cp)
    if best is None:
        cert = cp.aux(out.least_violating().xs)
        status = "not-achievable" if out.any_converged else "undecided"
        return Decision(status, point, None, None, cert, _slack(variant, cert, spec, point),
                        note="no feasible aux found" if status != "undecided" else
                        "search budget exhausted before any restart converged")
    aux = cp.aux(best.xs)
    e_star = max(0.0, best.objective)
    if e_star < point.e - BOUNDARY_TOL:
        status = "achievable"
    elif e_star > point.e + BOUNDARY_TOL:
        status = "not-achievable"
    else:
        status = "boundary"
    rep = constraints(variant, aux)
    rep.point = point
    rep.feasible = {"achievable": True, "not-achievable": False}.get(status)
    note = ""
    if status == "boundary" and variant == "causal" and predefined_w1_check(aux):
        note = "equality case: W2 given W1 has the same law given S and given Y"
    cert = aux if status != "achievable" else None
    return Decision(status, point, e_star, aux, cert, _slack(variant, aux, spec, point), rep, note)


def _state_entropy(variant: str, spec: ProblemSpec) -> float:
    names = ("S", "U") if variant == "two-sided" else ("S",)
    return evaluate(H(*names), spec.source)


@dataclass
class LeakageResult:
    """Outcome of :func:`min_leakage` (``status`` is ok/infeasible/undecided)."""

    status: str
    r: float
    e_star: Optional[float]
    witness: Optional[AuxJoint]
    max_rate: Optional[float] = None

    def __iter__(self):
        yield self.e_star
        yield self.witness

    def to_json(self) -> dict:
        return {"status": self.status, "rate": self.r, "e_star": self.e_star,
                "max_rate": self.max_rate,
                "witness": self.witness.to_json() if self.witness is not None else None}


def min_leakage(variant: str, r: float, spec: ProblemSpec,
                search: Optional[SearchConfig] = None) -> LeakageResult:
    """Minimal leakage lower bound over the class subject to ``R_cap >= r``."""
    if not math.isfinite(r) or r < 0:
        raise ArgumentError(f"rate must be finite and >= 0, got {r!r}")
    cfg = search or SearchConfig()
    w1, w2 = _sizes(spec, cfg)
    cp = class_program(variant, spec, w1, w2)
    qs = quantities(variant)
    cons = [("r_cap", qs["r_cap"], r)]
    if variant == "feedback":
        cons.append(("sum_minus_lower", qs["re_sum_cap"] - qs["e_lower"], r))
    prog = cp.program(qs["e_lower"], cons)
    out = run(prog, cp, cfg, "min-leakage")
    best = pick(out, cp)
    if best is None and not cfg.grid and out.any_converged:
        out = merge(out, rescue(prog, cp, cfg, "min-leakage", qs["r_cap"]))
        best = pick(out, cp)
    if best is None:
        if not out.any_converged:
            return LeakageResult("undecided", r, None, None)
        mr = max_rate(variant, spec, cfg)
        return LeakageResult("infeasible", r, None, None, mr)
    return LeakageResult("ok", r, max(0.0, best.objective), cp.aux(best.xs))


def max_rate(variant: str, spec: ProblemSpec, search: Optional[SearchConfig] = None) -> float:
    """Largest ``R_cap`` found over the class (a lower estimate of the max rate)."""
    cfg = search or SearchConfig()
    w1, w2 = _sizes(spec, cfg)
    cp = class_program(variant, spec, w1, w2)
    qs = quantities(variant)
    prog = cp.program(-qs["r_cap"])
    out = run(prog, cp, cfg, "max-rate")
    best = out.best()
    return max(0.0, -best.objective) if best is not None else 0.0


def predefined_w1_check(aux: AuxJoint, tol: float = 1e-9) -> bool:
    """Whether ``Q(w2|w1,s) = Q(w2|w1,y)`` on every positive ``(w1,s,y)`` cell."""
    j = aux.joint.marginal(("S", "W1", "W2", "Y")).mass  # axes S, W1, W2, Y
    p_sw = j.sum(axis=(2, 3))
    p_yw = j.sum(axis=(0, 2))
    q_s = np.divide(j.sum(axis=3), p_sw[:, :, None], out=np.zeros(j.shape[:3]), where=p_sw[:, :, None] > 0)
    q_y = np.divide(j.sum(axis=0), p_yw[:, None, :], out=np.zeros(j.shape[1:]), where=p_yw[:, None, :] > 0)
    pos = j.sum(axis=2) > tol
    for s, w, y in zip(*np.nonzero(pos)):
        if np.max(np.abs(q_s[s, w, :] - q_y[w, :, y])) > 1e-6:
            return False
    return True


# ---------------------------------------------------------------------------
# Boundary polygon
# ---------------------------------------------------------------------------

def region_boundary(aux: AuxJoint) -> list[RatePoint]:
    """Vertices of the (R, E) region supported by a causal aux.

    The region is ``{e_lower <= E <= min(H, cap), R >= 0, R + E <= cap}``.
    Vertices run counter-clockwise from ``(0, e_lower)``.  An empty list is
    returned when ``cap < e_lower``; a single point or a segment when the
    polygon degenerates.
    """
    if aux.variant != "causal":
        raise ArgumentError("region_boundary needs a causal aux")
    rep = constraints("causal", aux)
    a, h, c = rep.e_lower, rep.e_upper, rep.re_sum_cap
    if c < a - 1e-12:
        return []
    top = min(h, c)
    raw = [(0.0, a), (0.0, top), (max(0.0, c - top), top), (max(0.0, c - a), a)]
    out: list[RatePoint] = []
    for r, e in raw:
        p = RatePoint(r, e)
        if not any(abs(p.r - q.r) <= 1e-12 and abs(p.e - q.e) <= 1e-12 for q in out):
            out.append(p)
    return out


def polygon_csv(points: list[RatePoint]) -> str:
    lines = ["r,e"] + [f"{p.r!r},{p.e!r}" for p in points]
    return "\n".join(lines) + "\n"


def report_dumps(obj) -> str:
    return json.dumps(obj.to_json(), sort_keys=True, indent=2)
