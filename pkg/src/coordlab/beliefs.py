"""Exact receiver beliefs for small codes.

Everything here enumerates the code-induced joint of ``(S^N, W1^N, W2^N,
Y^N)`` and evaluates finite-length inequalities that relate the receiver's
posterior about the state to the single-letter target beliefs
``Q(s | y, w1, w2)``.  Codes are given as :class:`~coordlab.codec.Enumeration`
objects (lists of weighted branches with their auxiliary sequences) or as
block codes from :mod:`coordlab.codec`, which are enumerated on the fly.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import codec, model
from . import probcore as pc
from .codec import Enumeration, type_distances
from .errors import (ArgumentError, CapacityError, DivergenceInfiniteError, InvariantError,
                     SupportError, ZeroEventError)
from .model import AuxJoint
from .probcore import Alphabet, JointDist, Kernel

AUDIT_TOL = 1e-9
CHAIN_TOL = 1e-12
MIX_WEIGHT = 1e-3
LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Small codes
# ---------------------------------------------------------------------------

def as_enumeration(code, delta: float = codec.DEFAULT_DELTA, cap: int = codec.ENUM_CAP) -> Enumeration:
    if isinstance(code, Enumeration):
        _check_cap(code, cap)
        return code
    if isinstance(code, codec.BlockCode):
        return codec.enumerate_code(code, delta, cap)
    raise ArgumentError(f"cannot enumerate a {type(code).__name__}")


def _check_cap(en: Enumeration, cap: int) -> None:
    N = en.length
    total = en.sizes["S"] ** N * en.sizes["Y"] ** N * max(len(en.weights), 1)
    if total > cap:
        raise CapacityError(f"enumeration needs {total} cells, above {cap}")


def _sizes(aux: AuxJoint) -> dict:
    return {n: aux.size(n) for n in ("S", "W1", "W2", "X", "Y")}


def _all_seqs(k: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)


def iid_code(aux: AuxJoint, n: int, cap: int = codec.ENUM_CAP) -> Enumeration:
    """Stochastic encoder drawing ``(W1_i, W2_i)`` from ``Q(w1, w2 | s_i)``.

    The induced joint is exactly the ``n``-fold product of the aux.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    sz = _sizes(aux)
    ks, kw1, kw2, ky = sz["S"], sz["W1"], sz["W2"], sz["Y"]
    total = (ks * kw1 * kw2) ** n * ky ** n
    if total > cap:
        raise CapacityError(f"enumeration needs {total} cells, above {cap}")
    m = aux.joint.marginal(("S", "W1", "W2")) if aux.joint.has("W2") else None
    q = np.asarray(m.mass) if m is not None else np.asarray(aux.joint.marginal(("S", "W1")).mass)[..., None]
    cells = _all_seqs(ks * kw1 * kw2, n)
    s, w1, w2 = np.unravel_index(cells, (ks, kw1, kw2))
    weights = np.prod(q.ravel()[cells], axis=1)
    keep = weights > 0
    return Enumeration(weights[keep], s[keep], w1[keep], w2[keep], codec.y_kernel(aux), dict(sz))


def random_code(aux: AuxJoint, n: int, messages: int, seed: int,
                cap: int = codec.ENUM_CAP) -> Enumeration:
    """Deterministic encoder with a random ``W1`` book and ``W2`` table.

    Message ``m`` (uniform over ``messages``) selects ``W1`` codeword ``m``,
    drawn i.i.d. from ``Q_W1``.  For each ``(m, s^n)`` the ``W2`` sequence is
    fixed once, letter by letter from ``Q(w2 | s_i, w1_i)``.  Letters of
    ``X`` follow ``Q(x | s_i, w1_i)``.
    """
    if n < 1 or messages < 1:
        raise ArgumentError("n and messages must be >= 1")
    sz = _sizes(aux)
    ks, kw1, kw2, ky = sz["S"], sz["W1"], sz["W2"], sz["Y"]
    total = ks ** n * ky ** n * messages
    if total > cap:
        raise CapacityError(f"enumeration needs {total} cells, above {cap}")
    j = aux.joint
    pw1 = np.asarray(j.marginal("W1").mass)
    book = pc.sample_rows(pc.rng_stream(seed, "beliefs/w1"), pw1[None, :],
                          np.zeros(messages * n, dtype=np.int64)).reshape(messages, n)
    all_s = _all_seqs(ks, n)
    ps = np.asarray(j.marginal("S").mass)
    p_s = np.prod(ps[all_s], axis=1)
    s = np.repeat(all_s[None], messages, axis=0).reshape(-1, n)
    w1 = np.repeat(book, len(all_s), axis=0)
    if kw2 > 1:
        rows = np.asarray(j.conditional("W2", ("S", "W1")).table).reshape(ks * kw1, kw2)
        w2 = pc.sample_rows(pc.rng_stream(seed, "beliefs/w2"), rows, (s * kw1 + w1).ravel()).reshape(s.shape)
    else:
        w2 = np.zeros_like(s)
    weights = np.tile(p_s, messages) / messages
    keep = weights > 0
    return Enumeration(weights[keep], s[keep], w1[keep], w2[keep], codec.y_kernel(aux), dict(sz))


def mix_full_support(aux: AuxJoint, spec: model.ProblemSpec, weight: float = MIX_WEIGHT) -> AuxJoint:
    """Blend every free kernel of ``aux`` with the uniform kernel.

    The channel and source are untouched, so the result has full support
    only where they do.
    """
    if not 0 < weight < 1:
        raise ArgumentError("mixing weight must lie in (0, 1)")
    out = {}
    for name, k in aux.factors.items():
        t = np.asarray(k.table)
        nc = math.prod(a.size for a in k.to_axes)
        out[name] = Kernel(k.from_axes, k.to_axes, (1 - weight) * t + weight / nc)
    return model.compose_aux(aux.variant, out, spec)


# ---------------------------------------------------------------------------
# Shared enumeration pieces
# ---------------------------------------------------------------------------

@dataclass
class _Tables:
    """Posterior tables of an enumeration, grouped by auxiliary sequences."""

    N: int
    ks: int
    ky: int
    y_seqs: np.ndarray          # (|Y|^N, N)
    p_y: np.ndarray             # (|Y|^N,)
    post: np.ndarray            # (|S|^N, |Y|^N), columns with p_y == 0 are zero
    stage: np.ndarray           # (N, |Y|^N, |S|) posterior marginals of each S_i
    aux_seqs: np.ndarray        # (G, N, 2) distinct (w1, w2) sequences
    p_wy: np.ndarray            # (G, |Y|^N)
    extra: dict = field(default_factory=dict)


def _tables(en: Enumeration) -> _Tables:
    N, ks, ky = en.length, en.sizes["S"], en.sizes["Y"]
    py_b = en.y_given_branch() * en.weights[:, None]
    joint = en.joint_sy()
    p_y = joint.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        post = np.where(p_y[None, :] > 0, joint / p_y[None, :], 0.0)
    s_seqs = _all_seqs(ks, N)
    stage = np.zeros((N, post.shape[1], ks))
    for i in range(N):
        for s in range(ks):
            stage[i, :, s] = post[s_seqs[:, i] == s].sum(axis=0)
    ws = np.stack([en.w1, en.w2], axis=-1)
    uniq, inv = np.unique(ws.reshape(len(ws), -1), axis=0, return_inverse=True)
    p_wy = np.zeros((len(uniq), py_b.shape[1]))
    np.add.at(p_wy, inv.ravel(), py_b)
    return _Tables(N, ks, ky, _all_seqs(ky, N), p_y, post, stage, uniq.reshape(-1, N, 2), p_wy)


def _require_full_support(aux: AuxJoint, names: Sequence[str]) -> np.ndarray:
    keep = tuple(n for n in names if aux.joint.has(n))
    m = np.asarray(aux.joint.marginal(keep).mass)
    if np.any(m <= 0):
        raise SupportError(f"aux has zero cells on {''.join(keep)}; the bound constants are undefined "
                           "(mix with the uniform kernel first)")
    return m


def _q_given(aux: AuxJoint, given: Sequence[str]) -> np.ndarray:
    """``Q(s | given)`` as an array ``(|Y|, |W1|, |W2|, |S|)`` (unused axes size 1)."""
    j = aux.joint
    have = [n for n in given if j.has(n)]
    k = j.conditional("S", tuple(have))
    t = np.asarray(k.table)  # sorted(given) + (S,), already in W1, W2, Y order
    shape = [j.axis(n).size if n in have else 1 for n in ("W1", "W2", "Y")]
    t = t.reshape(shape + [j.axis("S").size])
    return np.transpose(t, (2, 0, 1, 3))  # (Y, W1, W2, S)


def _stage_log_q(tb: _Tables, q: np.ndarray) -> np.ndarray:
    """``-sum_i sum_s P(S_i=s|y) log2 Q(s|y_i,w_i)`` for every ``(group, y)``."""
    G = len(tb.aux_seqs)
    out = np.zeros((G, len(tb.y_seqs)))
    lq = -np.log2(q)
    w1 = np.minimum(tb.aux_seqs[..., 0], q.shape[1] - 1)
    w2 = np.minimum(tb.aux_seqs[..., 1], q.shape[2] - 1)
    for i in range(tb.N):
        g = lq[tb.y_seqs[:, i][None, :], w1[:, i][:, None], w2[:, i][:, None], :]  # (G, Y^N, S)
        out += np.einsum("gys,ys->gy", g, tb.stage[i])
    return out


def _cond_entropy(tb: _Tables) -> float:
    """``H(S^N | Y^N)`` in bits."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(tb.post > 0, tb.post * np.log2(tb.post), 0.0)
    return max(0.0, -float(t.sum(axis=0) @ tb.p_y))


def _kl_decomposed(tb: _Tables, q: np.ndarray) -> float:
    cross = float(np.sum(tb.p_wy * _stage_log_q(tb, q)))
    return max(0.0, (cross - _cond_entropy(tb)) / tb.N)


def _kl_direct(tb: _Tables, q: np.ndarray, cap: int = 20_000_000) -> Optional[float]:
    """Same quantity from full per-outcome divergences; ``None`` above ``cap``."""
    G, ny, ns = len(tb.aux_seqs), len(tb.y_seqs), tb.post.shape[0]
    if G * ny * ns > cap:
        return None
    s_seqs = _all_seqs(tb.ks, tb.N)
    lq = np.log2(q)
    total = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(tb.post > 0, np.log2(tb.post), 0.0)  # (S^N, Y^N)
    for g, seq in enumerate(tb.aux_seqs):
        w1 = np.minimum(seq[:, 0], q.shape[1] - 1)
        w2 = np.minimum(seq[:, 1], q.shape[2] - 1)
        logq = np.zeros((ns, ny))
        for i in range(tb.N):
            logq += lq[tb.y_seqs[:, i][None, :], w1[i], w2[i], s_seqs[:, i][:, None]]
        d = np.sum(tb.post * (logp - logq), axis=0)  # (Y^N,)
        total += float(d @ tb.p_wy[g])
    return max(0.0, total / tb.N)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def stage_names(N: int, prefix: str = "S") -> list[str]:
    w = len(str(N))
    return [f"{prefix}{i + 1:0{w}d}" for i in range(N)]


def posterior(code, y_seq: Sequence[int], cap: int = codec.ENUM_CAP) -> JointDist:
    """Exact posterior ``P(s^N | y^N)`` of a small code.

    Returns a joint over axes ``S1 .. SN`` (zero-padded when ``N >= 10``).

    Raises
    ------
    ZeroEventError
        If ``y_seq`` has probability zero under the code.
    """
    en = as_enumeration(code, cap=cap)
    N, ks, ky = en.length, en.sizes["S"], en.sizes["Y"]
    y = np.asarray(y_seq, dtype=np.int64).ravel()
    if y.size != N or np.any(y < 0) or np.any(y >= ky):
        raise ArgumentError(f"y_seq must hold {N} symbols in [0, {ky})")
    p = np.ones(len(en.weights)) * en.weights
    for i in range(N):
        p = p * en.y_kernel[en.s[:, i], en.w1[:, i], y[i]]
    total = p.sum()
    if total <= 0:
        raise ZeroEventError(f"observation {y.tolist()} has probability zero")
    mass = np.zeros(ks ** N)
    np.add.at(mass, np.ravel_multi_index(en.s.T, (ks,) * N), p)
    mass /= mass.sum()
    return JointDist([Alphabet(n, ks) for n in stage_names(N)], mass.reshape((ks,) * N))


@dataclass
class BeliefAudit:
    """Finite-length check of the leakage-to-belief divergence bound.

    Attributes
    ----------
    lhs : float
        ``(1/N) E[ D(P_{S^N|Y^N} || prod_i Q_{S_i|Y_i W1_i W2_i}) ]`` in bits,
        averaged over the realized ``(W1^N, W2^N, Y^N)``.
    rhs : float
        ``leakage - I(S;W1,W2,Y) + alpha1 * delta + alpha2 * p_atypical``.
    alpha1, alpha2 : float
        ``sum log2 1/Q(s|w1,w2,y)`` over all cells and ``log2 1/min Q``.
    p_atypical : float
        Mass of ``(s^N, w^N, y^N)`` outside the ``delta``-typical set under
        ``P(w^N, y^N) P(s^N | y^N)``, the measure the bound is stated for.
    p_atypical_true : float
        The same event under the true code-induced joint (reported only).
    """

    lhs: float
    rhs: float
    alpha1: float
    alpha2: float
    delta: float
    p_atypical: float
    leakage: float = 0.0
    info_sw: float = 0.0
    p_atypical_true: float = 0.0
    lhs_direct: Optional[float] = None
    n: int = 0

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + AUDIT_TOL

    def to_json(self) -> dict:
        return {"n": self.n, "delta": self.delta, "lhs": self.lhs, "lhs_direct": self.lhs_direct,
                "rhs": self.rhs, "slack": self.slack, "holds": self.holds, "alpha1": self.alpha1,
                "alpha2": self.alpha2, "p_atypical": self.p_atypical,
                "p_atypical_true": self.p_atypical_true, "leakage": self.leakage,
                "info_s_w1w2y": self.info_sw}


def _chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map(fn, n: int, threads: int) -> list:
    parts = _chunks(n, threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(len(parts)) as ex:
        return list(ex.map(fn, parts))


def _atypical_tilde(tb: _Tables, q_flat: np.ndarray, sizes: list, delta: float, threads: int) -> float:
    """Atypical mass under ``P(w, y) P(s | y)``, reduced over y-chunks in order."""
    s_seqs = _all_seqs(tb.ks, tb.N)
    ns = len(s_seqs)

    def part(sl: slice) -> float:
        ys = tb.y_seqs[sl]
        ny = len(ys)
        s_rep = np.repeat(s_seqs, ny, axis=0)      # (S^N * ny, N), s-major
        y_rep = np.tile(ys, (ns, 1))
        post = tb.post[:, sl].ravel()
        acc = 0.0
        for g, seq in enumerate(tb.aux_seqs):
            pw = tb.p_wy[g, sl]
            if not pw.any():
                continue
            d = type_distances([s_rep, seq[:, 0], seq[:, 1], y_rep], sizes, q_flat)
            bad = (d > delta).reshape(ns, ny)
            acc += float(np.sum(post.reshape(ns, ny) * bad * pw[None, :]))
        return acc

    return min(1.0, float(sum(_map(part, len(tb.y_seqs), threads))))


def _atypical_true(en: Enumeration, tb: _Tables, q_flat: np.ndarray, sizes: list, delta: float) -> float:
    py_b = en.y_given_branch() * en.weights[:, None]
    ny = len(tb.y_seqs)
    acc = 0.0
    for b in range(len(en.weights)):
        d = type_distances([en.s[b], en.w1[b], en.w2[b], tb.y_seqs], sizes, q_flat)
        acc += float(py_b[b][d > delta].sum())
    return min(1.0, acc)


def audit_theorem3(code, aux: AuxJoint, delta: float, threads: int = 1, strict: bool = True,
                   cap: int = codec.ENUM_CAP) -> BeliefAudit:
    """Evaluate both sides of the belief-divergence bound exactly.

    Parameters
    ----------
    code : Enumeration or BlockCode
        Small code; its realized auxiliary sequences define the target
        beliefs stage by stage.
    aux : AuxJoint
        Target distribution with full support on ``(S, W1, W2, X, Y)``.
    delta : float
        Typicality tolerance.
    strict : bool
        Raise :class:`InvariantError` when ``lhs > rhs + 1e-9``.

    Raises
    ------
    SupportError
        If the aux has a zero cell.
    """
    if not delta > 0:
        raise ArgumentError("delta must be positive")
    _require_full_support(aux, ("S", "W1", "W2", "X", "Y"))
    en = as_enumeration(code, cap=cap)
    _match_sizes(en, aux)
    tb = _tables(en)
    q = _q_given(aux, ("W1", "W2", "Y"))
    lhs = _kl_decomposed(tb, q)
    direct = _kl_direct(tb, q)
    alpha1 = float(np.sum(-np.log2(q)))
    alpha2 = float(-np.log2(q.min()))
    sz = _sizes(aux)
    sizes = [sz["S"], sz["W1"], sz["W2"], sz["Y"]]
    q_flat = _joint_flat(aux, ("S", "W1", "W2", "Y"))
    p_bad = _atypical_tilde(tb, q_flat, sizes, delta, threads)
    p_true = _atypical_true(en, tb, q_flat, sizes, delta)
    leak = codec.mutual_information_table(en.joint_sy()) / tb.N
    info = pc.mutual_information(aux.joint, "S", tuple(n for n in ("W1", "W2", "Y") if aux.joint.has(n)))
    rhs = leak - info + alpha1 * delta + alpha2 * p_bad
    out = BeliefAudit(lhs, rhs, alpha1, alpha2, delta, p_bad, leak, info, p_true, direct, tb.N)
    if strict and not out.holds:
        raise InvariantError(f"belief bound violated: lhs {lhs:.6g} > rhs {rhs:.6g}")
    return out


def _match_sizes(en: Enumeration, aux: AuxJoint) -> None:
    sz = _sizes(aux)
    for n in ("S", "W1", "Y"):
        if en.sizes.get(n, 1) != sz[n]:
            raise ArgumentError(f"code and aux disagree on |{n}|")
    if en.w1.size and (en.w1.max() >= sz["W1"] or en.w2.max() >= sz["W2"]):
        raise ArgumentError("code uses auxiliary symbols outside the aux alphabets")


def _joint_flat(aux: AuxJoint, names: Sequence[str]) -> np.ndarray:
    j = aux.joint
    have = [n for n in names if j.has(n)]
    m = j.marginal(tuple(have))
    t = np.transpose(np.asarray(m.mass), [m.names.index(n) for n in have])
    return t.ravel()


@dataclass
class BeliefSets:
    """Stage-wise belief closeness sets over positive-probability ``(w1^N, y^N)``.

    Attributes
    ----------
    w1, y : ndarray of shape (K, N)
        The outcomes.
    prob : ndarray
        ``P(w1^N, y^N)``.
    fraction : ndarray
        Share of stages whose posterior is within ``alpha^2 / (2 ln 2)`` bits
        of ``Q(. | y_i, w1_i)``.
    typical, in_b : ndarray of bool
        Joint typicality of ``(w1^N, y^N)`` and membership of the good set.
    p_bc : float
        Probability of the complement of the good set.
    bound : float
        ``(2 ln 2) / (alpha^2 gamma) * lhs + p_atypical``.
    """

    alpha: float
    gamma: float
    delta: float
    threshold: float
    w1: np.ndarray
    y: np.ndarray
    prob: np.ndarray
    fraction: np.ndarray
    typical: np.ndarray
    in_b: np.ndarray
    p_bc: float
    p_atypical: float
    lhs: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.p_bc

    @property
    def holds(self) -> bool:
        return self.p_bc <= self.bound + AUDIT_TOL

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma, "delta": self.delta,
                "threshold": self.threshold, "lhs": self.lhs, "p_bc": self.p_bc,
                "p_atypical": self.p_atypical, "bound": self.bound, "slack": self.slack,
                "holds": self.holds,
                "outcomes": [{"w1": w.tolist(), "y": y.tolist(), "prob": float(p), "fraction": float(f),
                              "typical": bool(t), "in_b": bool(b)}
                             for w, y, p, f, t, b in zip(self.w1, self.y, self.prob, self.fraction,
                                                         self.typical, self.in_b)]}


def _w1_tables(en: Enumeration) -> _Tables:
    """Tables with ``W2`` dropped from the grouping."""
    flat = Enumeration(en.weights, en.s, en.w1, np.zeros_like(en.w2), en.y_kernel, en.sizes)
    return _tables(flat)


def _check_params(alpha: float, gamma: float, delta: float) -> None:
    for name, v in (("alpha", alpha), ("gamma", gamma), ("delta", delta)):
        if not (np.isfinite(v) and v > 0):
            raise ArgumentError(f"{name} must be positive, got {v!r}")


def _stage_kl(tb: _Tables, q: np.ndarray) -> np.ndarray:
    """``D(P(S_i | y^N) || Q(. | y_i, w1_i))`` as ``(G, |Y|^N, N)``."""
    G, ny = len(tb.aux_seqs), len(tb.y_seqs)
    out = np.zeros((G, ny, tb.N))
    w1 = tb.aux_seqs[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(tb.N):
            p = tb.stage[i]  # (Y^N, S)
            qq = q[tb.y_seqs[:, i][None, :], w1[:, i][:, None], 0, :]  # (G, Y^N, S)
            t = np.where(p[None] > 0, p[None] * np.log2(p[None] / qq), 0.0)
            out[:, :, i] = np.maximum(t.sum(axis=-1), 0.0)
    return out


def belief_sets(code, aux: AuxJoint, alpha: float, gamma: float, delta: float,
                strict: bool = True, cap: int = codec.ENUM_CAP) -> BeliefSets:
    """Closeness sets of the receiver's stage beliefs and their probability bound.

    The targets here condition on ``(Y_i, W1_i)`` only.  ``lhs`` is the
    corresponding normalized divergence, and ``P(B^c)`` is checked against
    ``(2 ln 2)/(alpha^2 gamma) * lhs + P((w1^N, y^N) not typical)``.
    """
    _check_params(alpha, gamma, delta)
    _require_full_support(aux, ("S", "W1", "Y"))
    en = as_enumeration(code, cap=cap)
    _match_sizes(en, aux)
    tb = _w1_tables(en)
    q = _q_given(aux, ("W1", "Y"))
    lhs = _kl_decomposed(tb, q)
    thr = alpha ** 2 / (2 * LN2)
    kl = _stage_kl(tb, q)
    frac = (kl <= thr).mean(axis=-1)  # (G, Y^N)
    sz = _sizes(aux)
    q_wy = _joint_flat(aux, ("W1", "Y"))
    typ = np.zeros_like(frac, dtype=bool)
    for g, seq in enumerate(tb.aux_seqs):
        typ[g] = type_distances([seq[:, 0], tb.y_seqs], [sz["W1"], sz["Y"]], q_wy) <= delta
    in_b = (frac >= 1 - gamma) & typ
    pos = tb.p_wy > 0
    p_bc = min(1.0, float(tb.p_wy[pos & ~in_b].sum()))
    p_atyp = min(1.0, float(tb.p_wy[pos & ~typ].sum()))
    bound = 2 * LN2 / (alpha ** 2 * gamma) * lhs + p_atyp
    gi, yi = np.nonzero(pos)
    out = BeliefSets(alpha, gamma, delta, thr, tb.aux_seqs[gi, :, 0], tb.y_seqs[yi], tb.p_wy[gi, yi],
                     frac[gi, yi], typ[gi, yi], in_b[gi, yi], p_bc, p_atyp, lhs, bound)
    if strict and not out.holds:
        raise InvariantError(f"belief-set bound violated: P(B^c) {p_bc:.6g} > {bound:.6g}")
    return out


def _broadcast(k: Kernel, names: Sequence[str], shape: Sequence[int]) -> np.ndarray:
    """Kernel table laid out on the axes ``names`` (size 1 where absent)."""
    own = list(k.from_names + k.to_names)
    present = [n for n in names if n in own]
    t = np.transpose(np.asarray(k.table), [own.index(n) for n in present])
    return t.reshape([shape[i] if n in own else 1 for i, n in enumerate(names)])


def kl_chain_check(p: JointDist, q_factors: Sequence[Kernel], strict: bool = True) -> tuple[float, float]:
    """Joint versus per-index conditional divergences.

    Parameters
    ----------
    p : JointDist
        Joint over the conditioning axes ``A`` and the targets ``B``.
    q_factors : sequence of Kernel
        One kernel ``Q(B_i | A_i)`` per index; targets must be disjoint and
        together with the conditioning axes cover ``p``.

    Returns
    -------
    (lhs, rhs) : tuple of float
        ``D(P_{B|A} || prod_i Q_{B_i|A_i})`` and
        ``sum_i D(P_{B_i|A} || Q_{B_i|A_i})`` in bits, both averaged over
        ``P_A``.

    Raises
    ------
    DivergenceInfiniteError
        If ``p`` charges a cell where the product of factors vanishes.
    """
    if not q_factors:
        raise ArgumentError("need at least one factor")
    b_names = [n for k in q_factors for n in k.to_names]
    if len(set(b_names)) != len(b_names):
        raise ArgumentError("factor targets must be disjoint")
    a_names = sorted({n for k in q_factors for n in k.from_names} - set(b_names))
    if {n for k in q_factors for n in k.from_names} & set(b_names):
        raise ArgumentError("a factor conditions on another factor's target")
    if set(a_names) | set(b_names) != set(p.names):
        raise ArgumentError(f"factors cover {sorted(set(a_names) | set(b_names))}, joint has {list(p.names)}")
    names, shape = list(p.names), list(p.shape)
    m = np.asarray(p.mass)
    log_q = np.zeros(shape)
    with np.errstate(divide="ignore"):
        for k in q_factors:
            log_q = log_q + np.log2(_broadcast(k, names, shape))
    bad = (m > 0) & ~np.isfinite(log_q)
    if bad.any():
        raise DivergenceInfiniteError(np.unravel_index(int(np.flatnonzero(bad.ravel())[0]), m.shape))
    a_ax = tuple(i for i, n in enumerate(names) if n not in a_names)
    pa = m.sum(axis=a_ax, keepdims=True)
    pos = m > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = float(np.sum(np.where(pos, m * (np.log2(m / pa) - log_q), 0.0)))
        rhs = 0.0
        for k in q_factors:
            keep = set(a_names) | set(k.to_names)
            ax = tuple(i for i, n in enumerate(names) if n not in keep)
            mb = m.sum(axis=ax, keepdims=True)
            qb = np.log2(_broadcast(k, names, shape))
            posb = mb > 0
            rhs += float(np.sum(np.where(posb, mb * (np.log2(mb / pa) - qb), 0.0)))
    lhs, rhs = max(lhs, 0.0), max(rhs, 0.0)
    if strict and lhs < rhs - CHAIN_TOL:
        raise InvariantError(f"chain inequality violated: {lhs!r} < {rhs!r}")
    return lhs, rhs


@dataclass
class DistortionGap:
    """n-stage versus single-letter Bayes distortion."""

    n_stage: float
    single_letter: float
    gap: float
    bound: float
    d_bar: float
    sets: BeliefSets

    @property
    def slack(self) -> float:
        return self.bound - self.gap

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + AUDIT_TOL

    def to_json(self) -> dict:
        return {"n_stage": self.n_stage, "single_letter": self.single_letter, "gap": self.gap,
                "bound": self.bound, "d_bar": self.d_bar, "slack": self.slack, "holds": self.holds,
                "p_bc": self.sets.p_bc}


def distortion_gap(code, aux: AuxJoint, distortion, alpha: float, gamma: float, delta: float,
                   strict: bool = True, cap: int = codec.ENUM_CAP) -> DistortionGap:
    """Compare the best ``n``-stage estimate from ``Y^N`` with the single-letter one.

    The single-letter decoder sees ``(W1, Y)`` under the aux.  The gap is
    checked against ``(alpha + 2 gamma + delta + P(B^c)) * max d``.
    """
    from .game import inner_min

    d = np.asarray(distortion, dtype=float)
    if d.ndim != 2 or np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ArgumentError("distortion must be a finite nonnegative (S, V) table")
    sets = belief_sets(code, aux, alpha, gamma, delta, strict=strict, cap=cap)
    en = as_enumeration(code, cap=cap)
    tb = _w1_tables(en)
    if d.shape[0] != tb.ks:
        raise ArgumentError("distortion rows must be indexed by s")
    n_stage = 0.0
    for i in range(tb.N):
        scores = tb.stage[i] @ d  # (Y^N, V)
        n_stage += float(scores.min(axis=1) @ tb.p_y)
    n_stage /= tb.N
    single, _ = inner_min(aux, d, ("W1", "Y"))
    gap = abs(n_stage - single)
    d_bar = float(d.max())
    bound = (alpha + 2 * gamma + delta + sets.p_bc) * d_bar
    out = DistortionGap(n_stage, single, gap, bound, d_bar, sets)
    if strict and not out.holds:
        raise InvariantError(f"distortion gap {gap:.6g} exceeds bound {bound:.6g}")
    return out
