"""Block-Markov random coding scheme at desk scale.

The scheme chains ``B`` blocks of length ``n``.  In block ``b`` the encoder
sends a codeword ``W1(m_b, l_{b-1}, k_b)`` that carries the message, the bin
index ``l_{b-1}`` of the previous block's state sequence and an index
``k_b`` chosen so that ``W2`` correlates with that previous state.  The
decoder works one block behind: after block ``b`` it recovers the triple of
block ``b`` and emits the receiver actions of block ``b - 1``.

Books are drawn from Philox streams keyed by the code seed, so a code is
fully determined by ``(seed, aux, params)``.  ``W2`` books are generated
lazily, one row block per preceding ``W1`` codeword.
"""
from __future__ import annotations

import itertools
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import probcore as pc
from .errors import ArgumentError, BandError, CapacityError
from .model import AuxJoint
from .probcore import Alphabet, JointDist, rng_stream

DEFAULT_DELTA = 0.15
BOOK_CAP = 50_000_000          # symbols held in materialized books
ENUM_CAP = 100_000_000         # |S|^N * |Y|^N * |messages| for exact enumeration
SIZE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Rate parameters
# ---------------------------------------------------------------------------

def index_size(n: int, rate: float) -> int:
    """``ceil(2^(n*rate))`` with a minimum of 1."""
    if rate <= 0:
        return 1
    return max(1, math.ceil(2.0 ** (n * rate) - SIZE_TOL))


@dataclass(frozen=True)
class RateParams:
    """Rates (bits per symbol) and index-set sizes of a block code.

    ``violations`` lists the rate conditions that fail; a non-empty list
    means the requested pair lies outside what ``aux`` supports and decoding
    is expected to fail.
    """

    r: float
    r_l: float
    r_j: float
    r_k: float
    epsilon: float
    n: int
    b: int
    target_e: float
    sizes: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    violations: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def size_m(self) -> int:
        return self.sizes["m"]

    @property
    def size_l(self) -> int:
        return self.sizes["l"]

    @property
    def size_j(self) -> int:
        return self.sizes["j"]

    @property
    def size_k(self) -> int:
        return self.sizes["k"]

    def to_json(self) -> dict:
        return {"r": self.r, "r_l": self.r_l, "r_j": self.r_j, "r_k": self.r_k,
                "epsilon": self.epsilon, "n": self.n, "b": self.b, "target_e": self.target_e,
                "sizes": dict(self.sizes), "fractional_bit_loss": dict(self.loss),
                "violations": list(self.violations), "info": dict(self.info)}


def aux_info(aux: AuxJoint) -> dict:
    """Single-letter quantities the scheme relies on (bits)."""
    j = aux.joint
    mi = pc.mutual_information
    has_w2 = j.has("W2") and j.axis("W2").size > 1
    out = {"H(S)": pc.entropy(j, "S"), "I(S;W1,W2,Y)": mi(j, "S", ("W1", "W2", "Y")),
           "I(W1;Y)": mi(j, "W1", "Y"), "I(W1,S;Y)": mi(j, ("W1", "S"), "Y"),
           "I(W2;S|W1)": mi(j, "W2", "S", "W1") if has_w2 else 0.0,
           "I(W2;Y|W1)": mi(j, "W2", "Y", "W1") if has_w2 else 0.0}
    return out


def derive_rate_params(aux: AuxJoint, target_e: float, r: float, epsilon: float = 0.01,
                       n: int = 200, b: int = 8) -> RateParams:
    """Rate parameters of the block-Markov scheme.

    Raises
    ------
    BandError
        If ``target_e`` lies outside ``[I(S;W1,W2,Y), H(S)]``.
    """
    if aux.variant not in ("causal", "no-action"):
        raise ArgumentError("the block scheme needs a causal or no-action aux")
    if n < 1 or b < 1 or epsilon < 0 or r < 0:
        raise ArgumentError("need n >= 1, b >= 1, epsilon >= 0 and r >= 0")
    info = aux_info(aux)
    lo, hi = info["I(S;W1,W2,Y)"], info["H(S)"]
    if not (lo - 1e-9 <= target_e <= hi + 1e-9):
        raise BandError(target_e, lo, hi)
    r_l = max(0.0, target_e - lo - 2 * epsilon)
    r_j = info["H(S)"] + epsilon - r_l
    r_k = info["I(W2;S|W1)"] + epsilon if aux.variant == "causal" else 0.0
    sizes = {"m": index_size(n, r), "l": index_size(n, r_l), "j": index_size(n, r_j),
             "k": index_size(n, r_k)}
    rates = {"m": r, "l": r_l, "j": r_j, "k": r_k}
    loss = {k: math.log2(sizes[k]) / n - rates[k] for k in sizes}
    viol = []
    cap = info["I(W1;Y)"] + info["I(W2;Y|W1)"] - epsilon
    if r + r_l + r_k > cap + 1e-12:
        viol.append(f"decodability: R + R_L + R_K = {r + r_l + r_k:.6g} > {cap:.6g}")
    if r + target_e > info["I(W1,S;Y)"] + 1e-12:
        viol.append(f"sum rate: R + E = {r + target_e:.6g} > I(W1,S;Y) = {info['I(W1,S;Y)']:.6g}")
    return RateParams(r, r_l, r_j, r_k, epsilon, n, b, target_e, sizes, loss, tuple(viol), info)


# ---------------------------------------------------------------------------
# Codebooks
# ---------------------------------------------------------------------------

def _dtype(k: int):
    return np.uint8 if k <= 255 else np.int32


def _rows(j: JointDist, target: str, given: Sequence[str]) -> np.ndarray:
    """Kernel rows ``target | given`` (given in listed order, row-major)."""
    k = j.conditional(target, tuple(given))
    order = [k.from_names.index(g) for g in given]
    t = np.transpose(k.table, order + [len(given)])
    return t.reshape(-1, t.shape[-1])


class BlockCode:
    """Random books of the block-Markov scheme.

    Attributes
    ----------
    s_book : ndarray, shape (|L| * |J|, n)
        Row ``l * |J| + j`` is ``S^n(l, j)``.
    w1_book : ndarray, shape (|M| * |L| * |K|, n)
        Row ``(m * |L| + l) * |K| + k`` is ``W1^n(m, l, k)``.
    """

    def __init__(self, seed: int, aux: AuxJoint, params: RateParams, cap: int = BOOK_CAP):
        self.seed = int(seed)
        self.aux = aux
        self.params = params
        n = params.n
        self.n_triples = params.size_m * params.size_l * params.size_k
        self.n_s = params.size_l * params.size_j
        total = (self.n_s + self.n_triples) * n
        if total > cap:
            raise CapacityError(f"books need {total} symbols, above the cap of {cap}")
        j = aux.joint
        self.has_w2 = j.has("W2") and j.axis("W2").size > 1
        self.has_v = j.has("V")
        self.sizes = {a.name: a.size for a in j.axes}
        ps = j.marginal("S")
        self.s_book = self._iid(rng_stream(seed, "codec/s_book"), np.asarray(ps.mass).ravel(),
                                (self.n_s, n), ps.axes[0].size)
        qw = j.marginal("W1")
        self.w1_book = self._iid(rng_stream(seed, "codec/w1_book"), np.asarray(qw.mass).ravel(),
                                 (self.n_triples, n), qw.axes[0].size)
        self._w2_rows = _rows(j, "W2", ["W1"]) if self.has_w2 else None
        self._w2_cache: OrderedDict = OrderedDict()
        self.x_rows = _rows(j, "X", ["S", "W1"])
        self.channel_rows = _rows(j, "Y", ["S", "X"])
        if self.has_v:
            self.v_rows = _rows(j, "V", ["Y", "W1", "W2"])
            self.v_last_rows = _rows(j, "V", ["Y", "W1"])

    @staticmethod
    def _iid(rng, p, shape, k):
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        u = rng.random(math.prod(shape))
        return pc.inverse_cdf(cdf, u).reshape(shape).astype(_dtype(k))

    def triple(self, m: int, l: int, k: int) -> int:
        p = self.params
        return (m * p.size_l + l) * p.size_k + k

    def split(self, t: int) -> tuple[int, int, int]:
        p = self.params
        ml, k = divmod(t, p.size_k)
        m, l = divmod(ml, p.size_l)
        return m, l, k

    def w2_block(self, prev: int) -> np.ndarray:
        """All ``W2^n(prev, t)`` for ``t`` over triples, shape ``(n_triples, n)``."""
        n = self.params.n
        if not self.has_w2:
            return np.zeros((self.n_triples, n), dtype=np.uint8)
        if prev in self._w2_cache:
            self._w2_cache.move_to_end(prev)
            return self._w2_cache[prev]
        if self.n_triples * n > BOOK_CAP:
            raise CapacityError("W2 row block too large")
        rng = rng_stream(self.seed, f"codec/w2/{prev}")
        u = rng.random((self.n_triples, n))
        cdf = np.cumsum(self._w2_rows, axis=1)
        cdf[:, -1] = 1.0
        c = cdf[self.w1_book[prev].astype(np.int64)]  # (n, |W2|)
        out = (u[:, :, None] > c[None, :, :]).sum(axis=2).astype(_dtype(self.sizes["W2"]))
        self._w2_cache[prev] = out
        if len(self._w2_cache) > 8:
            self._w2_cache.popitem(last=False)
        return out

    def w2(self, prev: int, t: int) -> np.ndarray:
        return self.w2_block(prev)[t]

    @property
    def w2_book(self) -> np.ndarray:
        """Materialized ``W2`` book, shape ``(n_triples, n_triples, n)`` (small codes only)."""
        if self.n_triples ** 2 * self.params.n > BOOK_CAP:
            raise CapacityError("W2 book too large to materialize")
        return np.stack([self.w2_block(i) for i in range(self.n_triples)])


def build_code(seed: int, aux: AuxJoint, params: RateParams, cap: int = BOOK_CAP) -> BlockCode:
    return BlockCode(seed, aux, params, cap)


# ---------------------------------------------------------------------------
# Typicality over many candidates
# ---------------------------------------------------------------------------

def _mass(j: JointDist, names: Sequence[str]) -> np.ndarray:
    m = j.marginal(tuple(names))
    return np.transpose(np.asarray(m.mass), [m.names.index(x) for x in names]).ravel()


def type_distances(seqs: Sequence[np.ndarray], sizes: Sequence[int], q: np.ndarray) -> np.ndarray:
    """l1 distance between the type of each row of the stacked sequences and ``q``.

    Each entry of ``seqs`` is ``(n,)`` or ``(C, n)``; they broadcast to
    ``(C, n)``.  ``q`` is flat in the same axis order.
    """
    arrs = [np.atleast_2d(np.asarray(s, dtype=np.int64)) for s in seqs]
    code = np.zeros(np.broadcast_shapes(*[a.shape for a in arrs]), dtype=np.int64)
    for a, k in zip(arrs, sizes):
        code = code * k + a
    c, n = code.shape
    cells = math.prod(sizes)
    flat = (code + np.arange(c)[:, None] * cells).ravel()
    counts = np.bincount(flat, minlength=c * cells).reshape(c, cells)
    return np.abs(counts / n - q[None, :]).sum(axis=1)


def _first(mask: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class SimReport:
    """Outcome of one simulated transmission.

    ``block_errors[b-1]`` is the error event of block ``b`` for
    ``b = 1..B-1``: the block's sequences are atypical or the next block's
    indices are decoded wrongly.  ``decode_error`` is the fraction of message
    blocks (``2..B``; the single block for one-block codes) whose triple is
    decoded wrongly.
    """

    block_errors: list
    decode_error: float
    error_rate: float
    empirical: JointDist
    tv_to_target: float
    leakage_exact: Optional[float] = None
    leakage_note: str = ""
    leakage_plugin: Optional[float] = None
    decoded: list = field(default_factory=list)
    typical: list = field(default_factory=list)
    encoder_failures: int = 0
    sequences: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {"block_errors": list(map(int, self.block_errors)), "decode_error": self.decode_error,
                "error_rate": self.error_rate, "tv_to_target": self.tv_to_target,
                "leakage_exact": self.leakage_exact, "leakage_plugin": self.leakage_plugin,
                "leakage_note": self.leakage_note, "encoder_failures": self.encoder_failures,
                "decoded_correctly": [bool(x) for x in self.decoded],
                "typical": [bool(x) for x in self.typical], "empirical": self.empirical.to_json()}


def _draw(rng, rows: np.ndarray, which: np.ndarray) -> np.ndarray:
    return pc.sample_rows(rng, rows, which.astype(np.int64))


def run_blocks(code: BlockCode, seed: int, messages: Optional[Sequence[int]] = None,
               delta: float = DEFAULT_DELTA, keep_sequences: bool = False) -> SimReport:
    """Simulate the scheme over ``B`` blocks.

    ``messages`` gives ``m_2..m_B`` (length ``B - 1``); when omitted they are
    drawn uniformly from the run seed.  ``m_1``, ``l_0`` and ``k_1`` are 0.
    """
    p = code.params
    n, B = p.n, p.b
    j = code.aux.joint
    sz = code.sizes
    nm = p.size_m
    if messages is None:
        messages = rng_stream(seed, "codec/messages").integers(0, nm, size=max(B - 1, 0)).tolist()
    messages = [int(m) for m in messages]
    if len(messages) != max(B - 1, 0) or any(not 0 <= m < nm for m in messages):
        raise ArgumentError(f"need {B - 1} messages in [0, {nm})")
    msg = [0] + messages
    q_copy = np.diag(np.asarray(j.marginal("S").mass)).ravel()
    q_sw = _mass(j, ["S", "W1", "W2"])
    q_wy = _mass(j, ["W1", "Y"])
    q_wwy = _mass(j, ["Y", "W1", "W2"])
    tuple_names = ["S", "X", "W1", "W2", "Y"] + (["V"] if code.has_v else [])
    q_tuple = _mass(j, tuple_names)
    k_s, k_w1, k_w2, k_y = sz["S"], sz["W1"], sz.get("W2", 1), sz["Y"]

    S, X, Y, V, W1, W2 = {}, {}, {}, {}, {}, {}
    t = {1: code.triple(msg[0], 0, 0)}
    enc_fail = 0
    for b in range(1, B + 1):
        if b >= 2:
            d = type_distances([code.s_book, S[b - 1]], [k_s, k_s], q_copy)
            hit = _first(d <= delta)
            if hit is None:
                enc_fail += 1
                hit = 0
            l_prev = hit // p.size_j
            m_b = msg[b - 1]
            base = code.triple(m_b, l_prev, 0)
            cand = code.w2_block(t[b - 1])[base:base + p.size_k]
            d = type_distances([S[b - 1], code.w1_book[t[b - 1]], cand], [k_s, k_w1, k_w2], q_sw)
            k = _first(d <= delta)
            if k is None:
                enc_fail += 1
                k = 0
            t[b] = base + k
        S[b] = _draw(rng_stream(seed, f"codec/state/{b}"), np.asarray(j.marginal("S").mass).reshape(1, -1),
                     np.zeros(n, dtype=np.int64))
        W1[b] = code.w1_book[t[b]].astype(np.int64)
        X[b] = _draw(rng_stream(seed, f"codec/x/{b}"), code.x_rows, S[b] * k_w1 + W1[b])
        Y[b] = _draw(rng_stream(seed, f"codec/channel/{b}"), code.channel_rows, S[b] * sz["X"] + X[b])
    for b in range(1, B):
        W2[b] = code.w2(t[b], t[b + 1]).astype(np.int64)

    dec = {1: t[1]}
    correct = {}
    for b in range(2, B + 1):
        ok1 = type_distances([code.w1_book, Y[b]], [k_w1, k_y], q_wy) <= delta
        ok2 = type_distances([Y[b - 1], code.w1_book[dec[b - 1]], code.w2_block(dec[b - 1])],
                             [k_y, k_w1, k_w2], q_wwy) <= delta
        hits = np.flatnonzero(ok1 & ok2)
        dec[b] = int(hits[0]) if hits.size else 0
        correct[b] = hits.size == 1 and dec[b] == t[b]
        if code.has_v:
            w1h = code.w1_book[dec[b - 1]].astype(np.int64)
            w2h = code.w2(dec[b - 1], dec[b]).astype(np.int64)
            V[b - 1] = _draw(rng_stream(seed, f"codec/v/{b - 1}"), code.v_rows,
                             (Y[b - 1] * k_w1 + w1h) * k_w2 + w2h)
    if code.has_v:
        w1h = code.w1_book[dec[B]].astype(np.int64)
        V[B] = _draw(rng_stream(seed, f"codec/v/{B}"), code.v_last_rows, Y[B] * k_w1 + w1h)

    typical, errors = [], []
    for b in range(1, B):
        seqs = [S[b], X[b], W1[b], W2[b], Y[b]] + ([V[b]] if code.has_v else [])
        ty = type_distances(seqs, [sz[x] if x in sz else 1 for x in tuple_names], q_tuple)[0] <= delta
        typical.append(bool(ty))
        errors.append(int(not (ty and correct[b + 1])))
    pooled = range(1, B) if B > 1 else range(1, 2)
    emp, tv = _pooled(j, code.has_v, [S[b] for b in pooled], [X[b] for b in pooled],
                      [Y[b] for b in pooled], [V[b] for b in pooled] if code.has_v else None)
    msg_blocks = list(range(2, B + 1))
    derr = float(np.mean([not correct[b] for b in msg_blocks])) if msg_blocks else 0.0
    seqs = {}
    if keep_sequences:
        seqs = {"S": S, "X": X, "Y": Y, "V": V, "W1": W1, "W2": W2, "triples": t, "decoded": dec}
    return SimReport(errors, derr, float(np.mean(errors)) if errors else 0.0, emp, tv,
                     None, NO_ENUM_NOTE, pc.mutual_information(emp, "S", "Y"),
                     [correct[b] for b in msg_blocks], typical, enc_fail, seqs)


NO_ENUM_NOTE = "exact leakage needs enumeration (see exact_leakage); leakage_plugin is I(S;Y) of the pooled type"


def _pooled(j: JointDist, has_v: bool, S, X, Y, V):
    names = ["S", "X", "Y"] + (["V"] if has_v else [])
    target = j.marginal(tuple(names))
    cols = {"S": np.concatenate(S), "X": np.concatenate(X), "Y": np.concatenate(Y)}
    if has_v:
        cols["V"] = np.concatenate(V)
    emp = pc.empirical(cols, target.axes)
    return emp, pc.total_variation(emp, target)


# ---------------------------------------------------------------------------
# Single-block specialization
# ---------------------------------------------------------------------------

class SingleBlockCode(BlockCode):
    """One-block code: message codewords ``W1^n(m)`` only."""


def single_block_params(aux: AuxJoint, r: float, target_e: float, n: int, epsilon: float = 0.01) -> RateParams:
    base = derive_rate_params(aux, target_e, r, epsilon, n, 1)
    if base.r_l > 0:
        raise ArgumentError("a single block cannot carry a bin index (R_L > 0); use run_blocks")
    sizes = {"m": index_size(n, r), "l": 1, "j": 1, "k": 1}
    loss = {"m": math.log2(sizes["m"]) / n - r, "l": 0.0, "j": 0.0, "k": 0.0}
    viol = []
    cap = base.info["I(W1;Y)"] - epsilon
    if r > cap + 1e-12:
        viol.append(f"decodability: R = {r:.6g} > I(W1;Y) - eps = {cap:.6g}")
    return RateParams(r, 0.0, 0.0, 0.0, epsilon, n, 1, target_e, sizes, loss, tuple(viol), base.info)


def single_block_code(aux: AuxJoint, r: float, target_e: float, n: int, seed: int,
                      epsilon: float = 0.01) -> SingleBlockCode:
    if aux.variant != "no-action":
        raise ArgumentError("the single-block scheme needs a no-action aux (W2 degenerate)")
    return SingleBlockCode(seed, aux, single_block_params(aux, r, target_e, n, epsilon))


def run_single(code: SingleBlockCode, seed: int, message: Optional[int] = None,
               delta: float = DEFAULT_DELTA, keep_sequences: bool = False) -> SimReport:
    """Send one message over one block and decode it."""
    p = code.params
    n = p.n
    j = code.aux.joint
    sz = code.sizes
    if message is None:
        message = int(rng_stream(seed, "codec/messages").integers(0, p.size_m))
    if not 0 <= message < p.size_m:
        raise ArgumentError(f"message must be in [0, {p.size_m})")
    s = _draw(rng_stream(seed, "codec/state/1"), np.asarray(j.marginal("S").mass).reshape(1, -1),
              np.zeros(n, dtype=np.int64))
    w1 = code.w1_book[message].astype(np.int64)
    x = _draw(rng_stream(seed, "codec/x/1"), code.x_rows, s * sz["W1"] + w1)
    y = _draw(rng_stream(seed, "codec/channel/1"), code.channel_rows, s * sz["X"] + x)
    ok = type_distances([code.w1_book, y], [sz["W1"], sz["Y"]], _mass(j, ["W1", "Y"])) <= delta
    hits = np.flatnonzero(ok)
    dec = int(hits[0]) if hits.size else 0
    correct = hits.size == 1 and dec == message
    v = None
    names = ["S", "X", "W1", "Y"]
    seqs = [s, x, w1, y]
    if code.has_v:
        v = _draw(rng_stream(seed, "codec/v/1"), code.v_last_rows,
                  y * sz["W1"] + code.w1_book[dec].astype(np.int64))
        names.append("V")
        seqs.append(v)
    ty = type_distances(seqs, [sz[x_] for x_ in names], _mass(j, names))[0] <= delta
    emp, tv = _pooled(j, code.has_v, [s], [x], [y], [v] if code.has_v else None)
    out = {}
    if keep_sequences:
        out = {"S": s, "X": x, "Y": y, "V": v, "W1": w1, "message": message, "decoded": dec}
    return SimReport([int(not (ty and correct))], float(not correct), float(not (ty and correct)),
                     emp, tv, None, NO_ENUM_NOTE, pc.mutual_information(emp, "S", "Y"),
                     [bool(correct)], [bool(ty)], 0, out)


def single_block_scheme(aux: AuxJoint, r: float, target_e: float, n: int, seed: int,
                        epsilon: float = 0.01, delta: float = DEFAULT_DELTA) -> SimReport:
    """Build a one-block code from ``seed`` and run it once with the same seed."""
    return run_single(single_block_code(aux, r, target_e, n, seed, epsilon), seed, delta=delta)


# ---------------------------------------------------------------------------
# Exact leakage by enumeration
# ---------------------------------------------------------------------------

@dataclass
class Enumeration:
    """All branches ``(message, s^N)`` of a code with their auxiliary sequences.

    Given a branch, the outputs are independent across letters with law
    ``y_kernel[s_i, w1_i, :]``.
    """

    weights: np.ndarray     # (branches,)
    s: np.ndarray           # (branches, N)
    w1: np.ndarray          # (branches, N)
    w2: np.ndarray          # (branches, N)
    y_kernel: np.ndarray    # (|S|, |W1|, |Y|)
    sizes: dict

    @property
    def length(self) -> int:
        return self.s.shape[1]

    def y_given_branch(self) -> np.ndarray:
        """``P(y^N | branch)`` for all ``y^N`` in row-major order."""
        nb, N = self.s.shape
        ky = self.y_kernel.shape[-1]
        out = np.ones((nb, 1))
        for i in range(N):
            p_i = self.y_kernel[self.s[:, i], self.w1[:, i], :]  # (nb, |Y|)
            out = (out[:, :, None] * p_i[:, None, :]).reshape(nb, -1)
        return out

    def joint_sy(self) -> np.ndarray:
        """``P(s^N, y^N)`` as a ``(|S|^N, |Y|^N)`` table."""
        ks = self.sizes["S"]
        N = self.length
        s_idx = np.ravel_multi_index(self.s.T, (ks,) * N) if N else np.zeros(len(self.s), dtype=int)
        py = self.y_given_branch() * self.weights[:, None]
        out = np.zeros((ks ** N, py.shape[1]))
        np.add.at(out, s_idx, py)
        return out


def y_kernel(aux: AuxJoint) -> np.ndarray:
    """``K(y | s, w1) = sum_x Q(x|s,w1) T(y|x,s)`` as an ``(S, W1, Y)`` array."""
    j = aux.joint
    k = j.conditional("Y", ("S", "W1"))
    return np.asarray(k.table)


def _enum_cap_check(ks: int, ky: int, N: int, n_msg: int, cap: int) -> None:
    total = (ks ** N) * (ky ** N) * n_msg
    if total > cap:
        raise CapacityError(f"enumeration needs {total} cells, above {cap}; use plug-in estimate")


def enumerate_code(code: BlockCode, delta: float = DEFAULT_DELTA, cap: int = ENUM_CAP) -> Enumeration:
    """Enumerate every state sequence and message tuple of a (small) code.

    Messages are uniform.  For block codes the last block's ``W2`` uses the
    all-zero successor triple.
    """
    p = code.params
    n = p.n
    j = code.aux.joint
    sz = code.sizes
    single = isinstance(code, SingleBlockCode)
    B = 1 if single else p.b
    N = n * B
    ks, ky = sz["S"], sz["Y"]
    n_msg = p.size_m ** (1 if single else max(B - 1, 0))
    _enum_cap_check(ks, ky, N, n_msg, cap)
    ps = np.asarray(j.marginal("S").mass)
    q_copy = np.diag(ps).ravel()
    q_sw = _mass(j, ["S", "W1", "W2"])
    k_w1, k_w2 = sz["W1"], sz.get("W2", 1)
    all_s = np.array(list(itertools.product(range(ks), repeat=N)), dtype=np.int64).reshape(-1, N)
    p_s = np.prod(ps[all_s], axis=1) if N else np.ones(1)
    w_out, s_out, w1_out, w2_out = [], [], [], []
    msg_iter = (itertools.product(range(p.size_m), repeat=1) if single
                else itertools.product(range(p.size_m), repeat=max(B - 1, 0)))
    for ms in msg_iter:
        for si, s in enumerate(all_s):
            if p_s[si] == 0:
                continue
            blocks = s.reshape(B, n)
            if single:
                trip = [ms[0]]
            else:
                trip = [code.triple(0, 0, 0)]
                for b in range(2, B + 1):
                    d = type_distances([code.s_book, blocks[b - 2]], [ks, ks], q_copy)
                    hit = _first(d <= delta)
                    l_prev = (hit if hit is not None else 0) // p.size_j
                    base = code.triple(ms[b - 2], l_prev, 0)
                    cand = code.w2_block(trip[-1])[base:base + p.size_k]
                    d = type_distances([blocks[b - 2], code.w1_book[trip[-1]], cand], [ks, k_w1, k_w2], q_sw)
                    k = _first(d <= delta)
                    trip.append(base + (k if k is not None else 0))
            w1 = np.concatenate([code.w1_book[t_].astype(np.int64) for t_ in trip])
            if single or not code.has_w2:
                w2 = np.zeros(N, dtype=np.int64)
            else:
                nxt = trip[1:] + [code.triple(0, 0, 0)]
                w2 = np.concatenate([code.w2(a, b_).astype(np.int64) for a, b_ in zip(trip, nxt)])
            w_out.append(p_s[si] / n_msg)
            s_out.append(s)
            w1_out.append(w1)
            w2_out.append(w2)
    return Enumeration(np.array(w_out), np.array(s_out), np.array(w1_out), np.array(w2_out),
                       y_kernel(code.aux), dict(sz))


def mutual_information_table(p: np.ndarray) -> float:
    """``I(A;B)`` in bits for a 2-D joint table."""
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log2(p / (pa * pb)), 0.0)
    return max(0.0, float(t.sum()))


def exact_leakage(code, delta: float = DEFAULT_DELTA, cap: int = ENUM_CAP) -> float:
    """``I(S^N; Y^N) / N`` of the code-induced joint (bits per symbol)."""
    en = code if isinstance(code, Enumeration) else enumerate_code(code, delta, cap)
    return mutual_information_table(en.joint_sy()) / en.length


# ---------------------------------------------------------------------------
# Monte-Carlo trials
# ---------------------------------------------------------------------------

@dataclass
class TrialRow:
    trial: int
    seed: int
    decode_error: float
    tv: float
    leakage: Optional[float]
    block_errors: list


def simulate(aux: AuxJoint, params: RateParams, seed: int, trials: int, delta: float = DEFAULT_DELTA,
             threads: int = 1, shared_code: bool = False) -> tuple[list, list]:
    """Run ``trials`` independent transmissions.

    Trial ``t`` uses seed ``seed + t`` for its run and, unless
    ``shared_code``, for its own code.  Returns ``(reports, rows)`` in
    trial order regardless of ``threads``.
    """
    single = params.b == 1 and aux.variant == "no-action"
    common = None
    if shared_code:
        common = SingleBlockCode(seed, aux, params) if single else BlockCode(seed, aux, params)

    def one(tr: int):
        s = seed + tr
        code = common or (SingleBlockCode(s, aux, params) if single else BlockCode(s, aux, params))
        rep = run_single(code, s, delta=delta) if single else run_blocks(code, s, delta=delta)
        try:
            rep.leakage_exact = exact_leakage(code, delta)
            rep.leakage_note = "exact enumeration"
        except CapacityError:
            pass
        return rep

    workers = threads if threads > 0 else (len(os.sched_getaffinity(0)) or 1)
    if workers > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, range(trials)))
    else:
        reports = [one(t) for t in range(trials)]
    rows = [TrialRow(t, seed + t, r.decode_error, r.tv_to_target,
                     r.leakage_exact if r.leakage_exact is not None else r.leakage_plugin, r.block_errors)
            for t, r in enumerate(reports)]
    return reports, rows
