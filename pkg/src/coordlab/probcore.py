"""Finite-alphabet probability engine.

Distributions are dense tensors with named axes.  Axes are kept sorted by
name so that two distributions over the same variables always have the same
memory layout, which makes equality, hashing and serialization
deterministic.  All information measures are in bits.

Random numbers come from counter-based Philox generators keyed by a
``(seed, tag)`` pair, see :func:`rng_stream`.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ArgumentError, AxisError, CapacityError, DivergenceInfiniteError, ZeroEventError

MAX_CELLS = 10**7
MASS_TOL = 1e-12

AxisNames = Union[str, Iterable[str]]


@dataclass(frozen=True, order=True)
class Alphabet:
    """A named finite alphabet ``{0, ..., size-1}``."""

    name: str
    size: int

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ArgumentError("alphabet name must be a non-empty string")
        if int(self.size) != self.size or self.size < 1:
            raise ArgumentError(f"alphabet {self.name!r} must have size >= 1, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))

    def to_json(self) -> dict:
        return {"name": self.name, "size": self.size}


def _names(x: AxisNames) -> tuple[str, ...]:
    if isinstance(x, str):
        return (x,)
    return tuple(x)


def _check_cells(sizes: Sequence[int]) -> None:
    cells = math.prod(sizes)
    if cells > MAX_CELLS:
        raise CapacityError(f"{cells} cells exceeds the desk-scale cap of {MAX_CELLS}")


def _canonical(axes: Sequence[Alphabet], table: np.ndarray, offset: int = 0):
    """Sort ``axes`` by name and permute the matching dimensions of ``table``."""
    order = sorted(range(len(axes)), key=lambda i: axes[i].name)
    perm = list(range(offset)) + [offset + i for i in order]
    perm += list(range(offset + len(axes), table.ndim))
    return tuple(axes[i] for i in order), np.transpose(table, perm)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="C", copy=True)
    a.setflags(write=False)
    return a


class JointDist:
    """Probability tensor over named finite axes.

    Parameters
    ----------
    axes : sequence of Alphabet
        Axes of ``mass`` in the order given; they are re-sorted by name.
    mass : array_like
        Either a tensor of shape ``[a.size for a in axes]`` or a flat array in
        row-major order over ``axes``.
    check : bool
        Validate nonnegativity and unit total mass (tolerance ``1e-12``).
    """

    __slots__ = ("axes", "mass", "_index")

    def __init__(self, axes: Sequence[Alphabet], mass, *, check: bool = True):
        axes = tuple(axes)
        names = [a.name for a in axes]
        if len(set(names)) != len(names):
            raise AxisError(f"duplicate axis names in {names}")
        sizes = tuple(a.size for a in axes)
        _check_cells(sizes)
        m = np.asarray(mass, dtype=float)
        if m.shape != sizes:
            if m.size != math.prod(sizes):
                raise AxisError(f"mass of shape {m.shape} does not fit axes {sizes}")
            m = m.reshape(sizes)
        axes, m = _canonical(axes, m)
        if check:
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ArgumentError("mass entries must be finite and nonnegative")
            total = math.fsum(m.ravel().tolist()) if m.size < 4096 else float(m.sum())
            if abs(total - 1.0) > MASS_TOL:
                raise ArgumentError(f"total mass {total!r} is not within {MASS_TOL} of 1")
        self.axes: tuple[Alphabet, ...] = axes
        self.mass: np.ndarray = _frozen(m)
        self._index = {a.name: i for i, a in enumerate(axes)}

    # -- construction helpers -------------------------------------------
    @classmethod
    def uniform(cls, axes: Sequence[Alphabet]) -> "JointDist":
        sizes = [a.size for a in axes]
        return cls(axes, np.full(sizes, 1.0 / math.prod(sizes)))

    @classmethod
    def point(cls, axes: Sequence[Alphabet], cell: Sequence[int]) -> "JointDist":
        """Point mass at ``cell`` (given in the order of ``axes``)."""
        m = np.zeros([a.size for a in axes])
        m[tuple(cell)] = 1.0
        return cls(axes, m)

    @classmethod
    def from_json(cls, doc: Union[str, Mapping]) -> "JointDist":
        if isinstance(doc, str):
            doc = json.loads(doc)
        axes = [Alphabet(a["name"], a["size"]) for a in doc["axes"]]
        return cls(axes, np.asarray(doc["mass"], dtype=float))

    # -- accessors ------------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mass.shape

    def axis(self, name: str) -> Alphabet:
        try:
            return self.axes[self._index[name]]
        except KeyError:
            raise AxisError(f"unknown axis {name!r}; have {list(self.names)}") from None

    def has(self, name: str) -> bool:
        return name in self._index

    def _ids(self, names: AxisNames) -> list[int]:
        out = []
        for n in _names(names):
            if n not in self._index:
                raise AxisError(f"unknown axis {n!r}; have {list(self.names)}")
            out.append(self._index[n])
        return out

    # -- algebra --------------------------------------------------------
    def marginal(self, keep: AxisNames) -> "JointDist":
        """Marginal over the axes in ``keep``."""
        ids = set(self._ids(keep))
        drop = tuple(i for i in range(len(self.axes)) if i not in ids)
        m = self.mass.sum(axis=drop) if drop else self.mass
        return JointDist([self.axes[i] for i in sorted(ids)], m, check=False)

    def condition(self, evidence: Mapping[str, int]) -> "JointDist":
        """Condition on ``{axis: value}`` and drop the observed axes."""
        ids = self._ids(list(evidence))
        index: list = [slice(None)] * len(self.axes)
        for i, name in zip(ids, evidence):
            v = int(evidence[name])
            if not 0 <= v < self.axes[i].size:
                raise ArgumentError(f"value {v} out of range for axis {name!r}")
            index[i] = v
        sl = self.mass[tuple(index)]
        z = float(sl.sum())
        if z <= 0.0:
            raise ZeroEventError(f"event {dict(evidence)} has probability zero")
        rest = [a for i, a in enumerate(self.axes) if i not in ids]
        return JointDist(rest, sl / z, check=False)

    def conditional(self, targets: AxisNames, given: AxisNames = ()) -> "Kernel":
        """Kernel ``P(targets | given)``; zero-probability rows are flagged."""
        t, g = _names(targets), _names(given)
        if set(t) & set(g):
            raise ArgumentError("targets and given overlap")
        sub = self.marginal(t + g)
        gax = [sub.axis(n) for n in g]
        tax = [sub.axis(n) for n in t]
        perm = [sub._index[a.name] for a in sorted(gax) + sorted(tax)]
        joint = np.transpose(sub.mass, perm)
        gsz = tuple(a.size for a in sorted(gax))
        flat = joint.reshape(math.prod(gsz), -1)
        z = flat.sum(axis=1)
        unreachable = z <= 0.0
        rows = np.where(unreachable[:, None], 1.0 / flat.shape[1], flat / np.where(unreachable, 1.0, z)[:, None])
        return Kernel(sorted(gax), sorted(tax), rows.reshape(joint.shape), unreachable=unreachable.reshape(gsz))

    def compose(self, kernel: "Kernel") -> "JointDist":
        """Product ``P(x) K(y|x)`` over the union of axes."""
        return product_compose(self, kernel)

    def relabel(self, mapping: Mapping[str, str]) -> "JointDist":
        axes = [Alphabet(mapping.get(a.name, a.name), a.size) for a in self.axes]
        return JointDist(axes, self.mass, check=False)

    def prob(self, **cell: int) -> float:
        """Probability of a full cell given by keyword, e.g. ``p.prob(S=0, Y=1)``."""
        if set(cell) != set(self.names):
            raise AxisError(f"cell must name every axis {list(self.names)}")
        return float(self.mass[tuple(int(cell[n]) for n in self.names)])

    # -- serialization --------------------------------------------------
    def to_json(self) -> dict:
        return {"axes": [a.to_json() for a in self.axes], "mass": self.mass.ravel().tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointDist):
            return NotImplemented
        return self.axes == other.axes and np.array_equal(self.mass, other.mass)

    def __hash__(self) -> int:
        return hash((self.axes, self.mass.tobytes()))

    def __repr__(self) -> str:
        ax = ",".join(f"{a.name}:{a.size}" for a in self.axes)
        return f"JointDist({ax})"


class Kernel:
    """Conditional distribution ``K(to | from)``.

    Parameters
    ----------
    from_axes, to_axes : sequence of Alphabet
        Conditioning and output axes (each re-sorted by name).
    table : array_like
        Tensor of shape ``from_sizes + to_sizes`` or a 2-D row matrix with one
        row per conditioning tuple (row-major over ``from_axes``) and one
        column per output tuple.
    unreachable : array_like of bool, optional
        Rows that were obtained by conditioning on a null event.  They hold a
        uniform placeholder and normally compose against zero mass.
    """

    __slots__ = ("from_axes", "to_axes", "table", "unreachable")

    def __init__(self, from_axes: Sequence[Alphabet], to_axes: Sequence[Alphabet], table, *,
                 unreachable=None, check: bool = True):
        fa, ta = tuple(from_axes), tuple(to_axes)
        names = [a.name for a in fa + ta]
        if len(set(names)) != len(names):
            raise AxisError(f"duplicate axis names in {names}")
        if not ta:
            raise ArgumentError("a kernel needs at least one output axis")
        fs, ts = tuple(a.size for a in fa), tuple(a.size for a in ta)
        _check_cells(fs + ts)
        t = np.asarray(table, dtype=float)
        if t.shape != fs + ts:
            if t.size != math.prod(fs + ts):
                raise AxisError(f"table of shape {t.shape} does not fit {fs}+{ts}")
            t = t.reshape(fs + ts)
        if unreachable is None:
            u = np.zeros(fs, dtype=bool)
        else:
            u = np.asarray(unreachable, dtype=bool).reshape(fs)
        fa2, t = _canonical(fa, t)
        order = sorted(range(len(fa)), key=lambda i: fa[i].name)
        u = np.transpose(u, order) if fa else u
        ta2, t = _canonical(ta, t, offset=len(fa))
        if check:
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise ArgumentError("kernel entries must be finite and nonnegative")
            sums = t.reshape(math.prod(fs), -1).sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > MASS_TOL)
            if bad.size:
                raise ArgumentError(f"kernel row {int(bad[0])} sums to {sums[bad[0]]!r}")
        self.from_axes: tuple[Alphabet, ...] = fa2
        self.to_axes: tuple[Alphabet, ...] = ta2
        self.table: np.ndarray = _frozen(t)
        u = np.ascontiguousarray(u)
        u.setflags(write=False)
        self.unreachable: np.ndarray = u

    @classmethod
    def from_rows(cls, from_axes, to_axes, rows) -> "Kernel":
        return cls(from_axes, to_axes, np.asarray(rows, dtype=float))

    @classmethod
    def deterministic(cls, from_axes, to_axes, fn) -> "Kernel":
        """Kernel putting all mass on ``fn(*from_cell) -> to_cell``."""
        fs = [a.size for a in from_axes]
        ts = [a.size for a in to_axes]
        t = np.zeros(fs + ts)
        for cell in np.ndindex(*fs) if fs else [()]:
            out = fn(*cell)
            out = out if isinstance(out, tuple) else (out,)
            t[tuple(cell) + tuple(out)] = 1.0
        return cls(from_axes, to_axes, t)

    @classmethod
    def constant(cls, from_axes, dist: JointDist) -> "Kernel":
        """Kernel whose every row equals ``dist``."""
        fs = tuple(a.size for a in from_axes)
        t = np.broadcast_to(dist.mass, fs + dist.shape)
        return cls(from_axes, dist.axes, t)

    @classmethod
    def from_json(cls, doc: Union[str, Mapping]) -> "Kernel":
        if isinstance(doc, str):
            doc = json.loads(doc)
        given = set(doc.get("given", []))
        axes = [Alphabet(a["name"], a["size"]) for a in doc["axes"]]
        fa = [a for a in axes if a.name in given]
        ta = [a for a in axes if a.name not in given]
        return cls(fa, ta, np.asarray(doc["mass"], dtype=float))

    @property
    def from_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.from_axes)

    @property
    def to_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.to_axes)

    @property
    def rows(self) -> np.ndarray:
        """2-D view: one row per conditioning tuple, one column per output tuple."""
        nf = math.prod(a.size for a in self.from_axes)
        return self.table.reshape(nf, -1)

    def row(self, **given: int) -> JointDist:
        if set(given) != set(self.from_names):
            raise AxisError(f"row needs values for {list(self.from_names)}")
        idx = tuple(int(given[n]) for n in self.from_names)
        return JointDist(self.to_axes, self.table[idx], check=False)

    def relabel(self, mapping: Mapping[str, str]) -> "Kernel":
        fa = [Alphabet(mapping.get(a.name, a.name), a.size) for a in self.from_axes]
        ta = [Alphabet(mapping.get(a.name, a.name), a.size) for a in self.to_axes]
        return Kernel(fa, ta, self.table, unreachable=self.unreachable, check=False)

    def to_json(self) -> dict:
        return {
            "axes": [a.to_json() for a in self.from_axes + self.to_axes],
            "given": list(self.from_names),
            "mass": self.table.ravel().tolist(),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        return (self.from_axes == other.from_axes and self.to_axes == other.to_axes
                and np.array_equal(self.table, other.table))

    def __hash__(self) -> int:
        return hash((self.from_axes, self.to_axes, self.table.tobytes()))

    def __repr__(self) -> str:
        f = ",".join(self.from_names)
        t = ",".join(self.to_names)
        return f"Kernel({t}|{f})"


# ---------------------------------------------------------------------------
# Information measures
# ---------------------------------------------------------------------------

def _h(p: JointDist, names: tuple[str, ...]) -> float:
    if not names:
        return 0.0
    m = p.marginal(names).mass.ravel()
    m = m[m > 0]
    return float(-np.sum(m * np.log2(m)))


def _disjoint(*sets: tuple[str, ...]) -> None:
    seen: set[str] = set()
    for s in sets:
        if len(set(s)) != len(s) or seen & set(s):
            raise ArgumentError(f"axis sets must be pairwise disjoint, got {sets}")
        seen |= set(s)


def entropy(p: JointDist, targets: AxisNames, given: AxisNames = ()) -> float:
    """Conditional entropy ``H(targets | given)`` in bits."""
    t, g = _names(targets), _names(given)
    p._ids(t + g)
    _disjoint(t, g)
    return max(0.0, _h(p, t + g) - _h(p, g))


def mutual_information(p: JointDist, a: AxisNames, b: AxisNames, given: AxisNames = ()) -> float:
    """Conditional mutual information ``I(a; b | given)`` in bits, clamped at 0."""
    a, b, g = _names(a), _names(b), _names(given)
    p._ids(a + b + g)
    _disjoint(a, b, g)
    if not a or not b:
        return 0.0
    v = _h(p, a + g) + _h(p, b + g) - _h(p, a + b + g) - _h(p, g)
    return max(0.0, v)


def _same_axes(p: JointDist, q: JointDist) -> None:
    if p.axes != q.axes:
        raise AxisError(f"axis mismatch: {p.axes} vs {q.axes}")


def kl_divergence(p: JointDist, q: JointDist) -> float:
    """Relative entropy ``D(p || q)`` in bits.

    Raises
    ------
    DivergenceInfiniteError
        If some cell has ``p > 0`` and ``q == 0``.
    """
    _same_axes(p, q)
    pm, qm = p.mass, q.mass
    bad = (pm > 0) & (qm <= 0)
    if bad.any():
        cell = np.unravel_index(int(np.flatnonzero(bad.ravel())[0]), pm.shape)
        raise DivergenceInfiniteError(cell)
    pos = pm > 0
    return max(0.0, float(np.sum(pm[pos] * np.log2(pm[pos] / qm[pos]))))


def total_variation(p: JointDist, q: JointDist) -> float:
    """Unnormalized l1 distance ``sum |p - q|`` (range ``[0, 2]``)."""
    _same_axes(p, q)
    return float(np.abs(p.mass - q.mass).sum())


# ---------------------------------------------------------------------------
# Tensor plumbing
# ---------------------------------------------------------------------------

def marginalize(p: JointDist, keep: AxisNames) -> JointDist:
    return p.marginal(keep)


def condition(p: JointDist, evidence: Mapping[str, int]) -> JointDist:
    return p.condition(evidence)


def product_compose(p: JointDist, *kernels: Kernel) -> JointDist:
    """Chain ``p`` with kernels left to right: ``p(a) K1(b|a) K2(c|a,b) ...``.

    Each kernel's conditioning axes must already be present and its output
    axes must be new.  Sizes of shared axes must agree.
    """
    for k in kernels:
        have = {a.name: a for a in p.axes}
        for a in k.from_axes:
            if a.name not in have:
                raise AxisError(f"kernel conditions on {a.name!r} which is not in {list(have)}")
            if have[a.name].size != a.size:
                raise AxisError(f"size mismatch on axis {a.name!r}")
        for a in k.to_axes:
            if a.name in have:
                raise AxisError(f"kernel output {a.name!r} already present")
        out_axes = sorted(p.axes + k.to_axes)
        _check_cells([a.size for a in out_axes])
        ids = {a.name: i for i, a in enumerate(out_axes)}
        m = np.einsum(p.mass, [ids[n] for n in p.names],
                      k.table, [ids[n] for n in k.from_names + k.to_names],
                      [ids[a.name] for a in out_axes])
        p = JointDist(out_axes, m, check=False)
    return p


def product(*dists: JointDist) -> JointDist:
    """Independent product of distributions over disjoint axes."""
    out = dists[0]
    for d in dists[1:]:
        out = product_compose(out, Kernel((), d.axes, d.mass))
    return out


# ---------------------------------------------------------------------------
# Sequences and typicality
# ---------------------------------------------------------------------------

def _as_columns(seq, q: JointDist) -> np.ndarray:
    """Normalize a sequence into an ``(n, k)`` int array in ``q``'s axis order."""
    if isinstance(seq, Mapping):
        missing = set(q.names) - set(seq)
        if missing:
            raise AxisError(f"sequence lacks axes {sorted(missing)}")
        cols = [np.asarray(seq[n], dtype=np.int64).ravel() for n in q.names]
        lengths = {c.size for c in cols}
        if len(lengths) != 1:
            raise ArgumentError("all component sequences must have equal length")
        arr = np.stack(cols, axis=1) if cols else np.zeros((0, 0), dtype=np.int64)
    elif isinstance(seq, str):
        arr = np.array([[int(c)] for c in seq], dtype=np.int64).reshape(-1, 1)
    else:
        arr = np.asarray(seq, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ArgumentError("sequence must be non-empty")
    if arr.shape[1] != len(q.axes):
        raise AxisError(f"sequence has {arr.shape[1]} components, expected {len(q.axes)}")
    sizes = np.array(q.shape)
    if np.any(arr < 0) or np.any(arr >= sizes):
        raise ArgumentError("sequence symbol outside its alphabet")
    return arr


def empirical(seq, axes: Sequence[Alphabet]) -> JointDist:
    """Empirical distribution (type) of a sequence over ``axes``."""
    template = JointDist(axes, np.full([a.size for a in axes], 1.0 / math.prod(a.size for a in axes)))
    arr = _as_columns(seq, template)
    flat = np.ravel_multi_index(arr.T, template.shape)
    counts = np.bincount(flat, minlength=math.prod(template.shape))
    return JointDist(template.axes, counts / arr.shape[0], check=False)


def typical_distance(seq, q: JointDist) -> float:
    """l1 distance between the type of ``seq`` and ``q``."""
    return total_variation(empirical(seq, q.axes), q)


def is_typical(seq, q: JointDist, delta: float) -> bool:
    """True iff ``||type(seq) - q||_1 <= delta``."""
    if not delta > 0:
        raise ArgumentError("delta must be positive")
    return typical_distance(seq, q) <= delta


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

def rng_stream(seed: int, tag: str) -> np.random.Generator:
    """Independent Philox stream for a ``(seed, purpose-tag)`` pair.

    The 128-bit Philox key is the BLAKE2b digest of ``"<seed>/<tag>"``, so
    streams for different tags never share state and a stream's output does
    not depend on what other streams have drawn.
    """
    digest = hashlib.blake2b(f"{int(seed)}/{tag}".encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the first cell whose cumulative mass exceeds ``u``.

    ``cdf`` is either 1-D (shared) or 2-D with one row per draw.
    """
    if cdf.ndim == 1:
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, cdf.size - 1)
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def sample_cells(rng: np.random.Generator, q: JointDist, n: int) -> np.ndarray:
    """Draw ``n`` flat cell indices of ``q`` by inverse CDF."""
    cdf = np.cumsum(q.mass.ravel())
    cdf[-1] = 1.0
    return inverse_cdf(cdf, rng.random(n))


def sample(seed: int, q: JointDist, n: int, tag: str = "sample") -> np.ndarray:
    """Draw an i.i.d. sequence of length ``n`` from ``q``.

    Returns
    -------
    ndarray of shape (n, k)
        One column per axis of ``q`` in canonical order.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    cells = sample_cells(rng_stream(seed, tag), q, n)
    return np.stack(np.unravel_index(cells, q.shape), axis=1).astype(np.int64)


def sample_rows(rng: np.random.Generator, rows: np.ndarray, which: np.ndarray) -> np.ndarray:
    """Draw one column per entry of ``which`` from the row-stochastic ``rows``."""
    cdf = np.cumsum(rows[which], axis=1)
    cdf[:, -1] = 1.0
    return inverse_cdf(cdf, rng.random(which.size))
