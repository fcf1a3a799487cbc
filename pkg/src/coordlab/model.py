"""Problem definitions and auxiliary factorizations.

A :class:`ProblemSpec` holds the fixed ingredients (source, channel, target
conditionals, distortion).  An :class:`AuxJoint` adds the free auxiliary
kernels of one of the supported distribution classes and carries the composed
joint distribution.

Array conventions in problem documents follow the library-wide rule: every
table is row-major over axes sorted by name.  Kernel tables have one row per
conditioning tuple; e.g. the channel of a plain problem has rows indexed by
``(s, x)`` with ``s`` major, and columns indexed by ``y``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from . import probcore as pc
from .errors import ArgumentError, AxisError, ValidationError
from .probcore import Alphabet, JointDist, Kernel

VARIANTS = ("causal", "no-action", "two-sided", "feedback", "strictly-causal", "corollary")
KNOWN_AXES = ("S", "U", "V", "X", "Y", "Y1", "Y2", "Z")
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class FactorSpec:
    """Shape of one free kernel of an auxiliary class."""

    name: str
    given: tuple[str, ...]
    target: tuple[str, ...]


# ---------------------------------------------------------------------------
# Problem specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Validated problem: source, channel, targets, distortion and aux caps."""

    alphabets: Mapping[str, int]
    source: JointDist
    channel: Kernel
    target_x: Kernel
    target_v: Optional[Kernel] = None
    distortion: Optional[np.ndarray] = None
    aux_caps: tuple[int, int] = (0, 0)

    @property
    def kind(self) -> str:
        if "Y1" in self.alphabets:
            return "feedback"
        if "U" in self.alphabets:
            return "two-sided"
        return "plain"

    def alphabet(self, name: str) -> Alphabet:
        if name not in self.alphabets:
            raise AxisError(f"problem has no alphabet {name!r}")
        return Alphabet(name, self.alphabets[name])

    @property
    def state_axes(self) -> tuple[str, ...]:
        """Axes known to the encoder (the state block)."""
        return ("S", "U") if self.kind == "two-sided" else ("S",)

    @property
    def output_axes(self) -> tuple[str, ...]:
        return self.channel.to_names

    @property
    def has_v(self) -> bool:
        return self.target_v is not None

    @property
    def d_bar(self) -> float:
        if self.distortion is None:
            raise ArgumentError("problem has no distortion table")
        return float(np.max(self.distortion))

    def target_joint(self) -> JointDist:
        """Target distribution: source, target_x, channel and target_v chained."""
        p = pc.product_compose(self.source, self.target_x, self.channel)
        if self.target_v is not None:
            p = pc.product_compose(p, self.target_v)
        return p

    def default_caps(self) -> tuple[int, int]:
        c = math.prod(self.alphabets.values()) + 1
        return (c, c)

    def with_caps(self, w1: int, w2: int) -> "ProblemSpec":
        return ProblemSpec(dict(self.alphabets), self.source, self.channel, self.target_x,
                           self.target_v, self.distortion, (int(w1), int(w2)))

    def to_json(self) -> dict:
        doc: dict = {
            "alphabets": dict(self.alphabets),
            "source": self.source.mass.ravel().tolist(),
            "channel": self.channel.rows.tolist(),
            "target_x": self.target_x.rows.tolist(),
        }
        if self.target_v is not None:
            doc["target_v"] = self.target_v.rows.tolist()
        if self.distortion is not None:
            doc["distortion"] = np.asarray(self.distortion).tolist()
        doc["aux_caps"] = {"w1": self.aux_caps[0], "w2": self.aux_caps[1]}
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.dumps() == other.dumps()

    def __hash__(self) -> int:
        return hash(self.dumps())


def _stochastic_rows(doc, pointer: str, n_rows: int, n_cols: int) -> np.ndarray:
    if not isinstance(doc, list) or len(doc) != n_rows:
        got = len(doc) if isinstance(doc, list) else type(doc).__name__
        raise ValidationError(pointer, f"expected a list of {n_rows} rows, got {got}")
    out = np.empty((n_rows, n_cols))
    for i, row in enumerate(doc):
        rp = f"{pointer}/{i}"
        if not isinstance(row, list) or len(row) != n_cols:
            raise ValidationError(rp, f"expected a row of {n_cols} numbers")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ValidationError(f"{rp}/{j}", f"entry must be a finite nonnegative number, got {v!r}")
        out[i] = row
        total = math.fsum(row)
        if abs(total - 1.0) > pc.MASS_TOL:
            raise ValidationError(rp, f"row sums to {total!r}, not 1")
    return out


def _positive_int(v, pointer: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ValidationError(pointer, f"expected a positive integer, got {v!r}")
    return v


def problem_from_dict(doc) -> ProblemSpec:
    """Validate a parsed problem document.

    Raises
    ------
    ValidationError
        With a JSON pointer to the first offending element.
    """
    if not isinstance(doc, dict):
        raise ValidationError("", "problem document must be a JSON object")
    allowed = {"alphabets", "source", "channel", "target_x", "target_v", "distortion", "aux_caps"}
    for k in doc:
        if k not in allowed:
            raise ValidationError(f"/{k}", "unknown key")
    for k in ("alphabets", "source", "channel", "target_x"):
        if k not in doc:
            raise ValidationError(f"/{k}", "required key missing")
    al = doc["alphabets"]
    if not isinstance(al, dict):
        raise ValidationError("/alphabets", "must be an object of name -> size")
    sizes: dict[str, int] = {}
    for name, v in al.items():
        if name not in KNOWN_AXES:
            raise ValidationError(f"/alphabets/{name}", f"unknown alphabet; allowed {list(KNOWN_AXES)}")
        sizes[name] = _positive_int(v, f"/alphabets/{name}")
    names = set(sizes)
    feedback = bool(names & {"Y1", "Y2"})
    two_sided = bool(names & {"U", "Z"})
    need = {"S", "X"} | ({"Y1", "Y2"} if feedback else {"Y"})
    if two_sided:
        need |= {"U", "Z"}
    for n in sorted(need - names):
        raise ValidationError(f"/alphabets/{n}", "required alphabet missing")
    if feedback and "Y" in names:
        raise ValidationError("/alphabets/Y", "feedback problems use Y1/Y2 instead of Y")
    if feedback and two_sided:
        raise ValidationError("/alphabets", "two-sided and feedback settings cannot be combined")
    A = {n: Alphabet(n, s) for n, s in sizes.items()}

    state = [A[n] for n in sorted(["S", "U", "Z"] if two_sided else ["S"])]
    src = doc["source"]
    n_src = math.prod(a.size for a in state)
    flat = np.asarray(src, dtype=object).ravel().tolist() if isinstance(src, list) else None
    if flat is None or len(flat) != n_src:
        raise ValidationError("/source", f"expected {n_src} probabilities over {[a.name for a in state]}")
    for i, v in enumerate(flat):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
            raise ValidationError(f"/source/{i}", f"entry must be a finite nonnegative number, got {v!r}")
    if abs(math.fsum(flat) - 1.0) > pc.MASS_TOL:
        raise ValidationError("/source", f"probabilities sum to {math.fsum(flat)!r}, not 1")
    source = JointDist(state, np.array(flat, dtype=float))

    outs = [A["Y1"], A["Y2"]] if feedback else [A["Y"]]
    ch_from = [A["S"], A["X"]]
    rows = _stochastic_rows(doc["channel"], "/channel", A["S"].size * A["X"].size,
                            math.prod(a.size for a in outs))
    channel = Kernel(ch_from, outs, rows)

    enc = [A["S"], A["U"]] if two_sided else [A["S"]]
    rows = _stochastic_rows(doc["target_x"], "/target_x", math.prod(a.size for a in enc), A["X"].size)
    target_x = Kernel(enc, [A["X"]], rows)

    target_v = None
    if "target_v" in doc:
        if "V" not in A:
            raise ValidationError("/target_v", "target_v requires a V alphabet")
        vg = sorted(state + [A["X"]] + outs)
        rows = _stochastic_rows(doc["target_v"], "/target_v", math.prod(a.size for a in vg), A["V"].size)
        target_v = Kernel(vg, [A["V"]], rows)

    distortion = None
    if "distortion" in doc:
        if "V" not in A:
            raise ValidationError("/distortion", "distortion requires a V alphabet")
        d = doc["distortion"]
        if not isinstance(d, list) or len(d) != A["S"].size:
            raise ValidationError("/distortion", f"expected {A['S'].size} rows indexed by s")
        for i, row in enumerate(d):
            if not isinstance(row, list) or len(row) != A["V"].size:
                raise ValidationError(f"/distortion/{i}", f"expected {A['V'].size} entries indexed by v")
            for j, v in enumerate(row):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                    raise ValidationError(f"/distortion/{i}/{j}", f"distortion must be finite and >= 0, got {v!r}")
        distortion = np.array(d, dtype=float)
        distortion.setflags(write=False)

    spec = ProblemSpec(sizes, source, channel, target_x, target_v, distortion, (0, 0))
    caps = spec.default_caps()
    if "aux_caps" in doc:
        ac = doc["aux_caps"]
        if not isinstance(ac, dict):
            raise ValidationError("/aux_caps", "must be an object with keys w1, w2")
        for k in ac:
            if k not in ("w1", "w2"):
                raise ValidationError(f"/aux_caps/{k}", "unknown key")
        caps = (_positive_int(ac.get("w1", caps[0]), "/aux_caps/w1"),
                _positive_int(ac.get("w2", caps[1]), "/aux_caps/w2"))
    return spec.with_caps(*caps)


def load_problem(source: Union[str, Path]) -> ProblemSpec:
    """Load and validate a problem from a path or from JSON text."""
    text: str
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ValidationError("", f"cannot read {path}: {exc.strerror or exc}") from None
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError("", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    return problem_from_dict(doc)


def dump_problem(spec: ProblemSpec) -> str:
    return json.dumps(spec.to_json(), indent=2)


# ---------------------------------------------------------------------------
# Auxiliary classes
# ---------------------------------------------------------------------------

def variant_layout(variant: str, spec: ProblemSpec) -> tuple[list, tuple[str, ...]]:
    """Chain order and observed axes of a variant.

    Returns
    -------
    chain : list
        Items in composition order.  Strings are ``"source"``, ``"channel"``
        or a free factor name; :class:`FactorSpec` entries describe free
        kernels.
    observed : tuple of str
        Axes whose marginal must match the target ("" for the corollary).
    """
    if variant not in VARIANTS:
        raise ArgumentError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    kind = spec.kind
    expected = {"two-sided": "two-sided", "feedback": "feedback"}.get(variant, "plain")
    if kind != expected:
        raise ArgumentError(f"variant {variant!r} needs a {expected} problem, got a {kind} one")
    v = spec.has_v
    F = FactorSpec
    if variant == "causal":
        chain = [F("q_w1", (), ("W1",)), F("q_w2", ("S", "W1"), ("W2",)), F("q_x", ("S", "W1"), ("X",)),
                 "channel"] + ([F("q_v", ("W1", "W2", "Y"), ("V",))] if v else [])
        obs = ("S", "X", "Y") + (("V",) if v else ())
    elif variant == "no-action":
        chain = [F("q_w1", (), ("W1",)), "w2_null", F("q_x", ("S", "W1"), ("X",)),
                 "channel"] + ([F("q_v", ("W1", "W2", "Y"), ("V",))] if v else [])
        obs = ("S", "X", "Y") + (("V",) if v else ())
    elif variant == "two-sided":
        chain = [F("q_w1", (), ("W1",)), F("q_w2", ("S", "U", "W1"), ("W2",)),
                 F("q_x", ("S", "U", "W1"), ("X",)), "channel"]
        chain += [F("q_v", ("W1", "W2", "Y", "Z"), ("V",))] if v else []
        obs = ("S", "U", "X", "Y", "Z") + (("V",) if v else ())
    elif variant == "feedback":
        chain = [F("q_w1", (), ("W1",)), F("q_x", ("S", "W1"), ("X",)), "channel",
                 F("q_w2", ("S", "W1", "Y2"), ("W2",))]
        chain += [F("q_v", ("W1", "W2", "Y1"), ("V",))] if v else []
        obs = ("S", "X", "Y1", "Y2") + (("V",) if v else ())
    elif variant == "strictly-causal":
        chain = [F("q_x", (), ("X",)), F("q_w2", ("S", "X"), ("W2",)), "channel"]
        chain += [F("q_v", ("W2", "X", "Y"), ("V",))] if v else []
        obs = ("S", "X", "Y") + (("V",) if v else ())
    else:  # corollary: only the input law is free
        chain = [F("q_x", (), ("X",)), "channel"]
        obs = ()
    return ["source"] + chain, obs


def free_factors(variant: str, spec: ProblemSpec) -> list[FactorSpec]:
    chain, _ = variant_layout(variant, spec)
    return [c for c in chain if isinstance(c, FactorSpec)]


def aux_alphabets(spec: ProblemSpec, w1: int, w2: int) -> dict[str, Alphabet]:
    out = {n: Alphabet(n, s) for n, s in spec.alphabets.items()}
    out["W1"] = Alphabet("W1", int(w1))
    out["W2"] = Alphabet("W2", int(w2))
    return out


@dataclass(frozen=True, eq=False)
class AuxJoint:
    """Auxiliary factorization of a variant together with its composed joint.

    Attributes
    ----------
    variant : str
        One of :data:`VARIANTS`.
    factors : dict of str to Kernel
        Free kernels keyed by ``q_w1``, ``q_w2``, ``q_x``, ``q_v``.
    joint : JointDist
        The chained product over state, auxiliaries, input, outputs and
        (when targeted) the receiver action.
    """

    variant: str
    factors: Mapping[str, Kernel]
    joint: JointDist = field(repr=False)

    def size(self, name: str) -> int:
        return self.joint.axis(name).size if self.joint.has(name) else 1

    def to_json(self) -> dict:
        return {"variant": self.variant, "factors": {k: self.factors[k].to_json() for k in sorted(self.factors)}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def compose_aux(variant: str, factors: Mapping[str, Union[Kernel, np.ndarray]], spec: ProblemSpec) -> AuxJoint:
    """Chain the variant's factorization.

    ``factors`` maps each free factor name to a :class:`Kernel` or to a raw
    table of shape ``given_sizes + target_sizes`` (axis order as listed by
    :func:`free_factors`, i.e. sorted by name).  Auxiliary sizes are inferred
    from the tables.
    """
    chain, _ = variant_layout(variant, spec)
    specs = {c.name: c for c in chain if isinstance(c, FactorSpec)}
    extra = set(factors) - set(specs)
    if extra - ({"q_w2"} if variant == "no-action" else set()):
        raise ArgumentError(f"unexpected factors {sorted(extra)} for variant {variant!r}")
    missing = set(specs) - set(factors)
    if missing:
        raise ArgumentError(f"missing factors {sorted(missing)} for variant {variant!r}")
    sizes = dict(spec.alphabets)
    for name in ("q_w1", "q_w2"):
        f = factors.get(name)
        w = "W1" if name == "q_w1" else "W2"
        if f is not None:
            sizes[w] = f.to_axes[0].size if isinstance(f, Kernel) else int(np.shape(f)[-1])
    sizes.setdefault("W1", 1)
    sizes.setdefault("W2", 1)
    if variant == "no-action" and sizes["W2"] != 1:
        raise ArgumentError("no-action variant requires a degenerate W2")
    kernels: dict[str, Kernel] = {}
    for name, fs in specs.items():
        f = factors[name]
        given = [Alphabet(n, sizes[n]) for n in fs.given]
        target = [Alphabet(n, sizes[n]) for n in fs.target]
        if isinstance(f, Kernel):
            if f.from_axes != tuple(sorted(given)) or f.to_axes != tuple(sorted(target)):
                raise AxisError(f"factor {name}: expected {fs.target}|{fs.given} with sizes "
                                f"{[a.size for a in given]}->{[a.size for a in target]}, got {f!r}")
            kernels[name] = f
        else:
            shape = tuple(a.size for a in given + target)
            arr = np.asarray(f, dtype=float)
            if arr.shape != shape and arr.size != math.prod(shape):
                raise AxisError(f"factor {name}: table shape {arr.shape} does not match {shape}")
            kernels[name] = Kernel(given, target, arr.reshape(shape))
    p = spec.source
    for item in chain[1:]:
        if item == "channel":
            p = pc.product_compose(p, spec.channel)
        elif item == "w2_null":
            p = pc.product_compose(p, Kernel((), [Alphabet("W2", 1)], [1.0]))
        else:
            p = pc.product_compose(p, kernels[item.name])
    return AuxJoint(variant, kernels, p)


def aux_from_json(doc: Union[str, Mapping], spec: ProblemSpec) -> AuxJoint:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if not isinstance(doc, Mapping) or "variant" not in doc or "factors" not in doc:
        raise ValidationError("", "aux document needs 'variant' and 'factors'")
    try:
        factors = {k: Kernel.from_json(v) for k, v in doc["factors"].items()}
        return compose_aux(doc["variant"], factors, spec)
    except (ArgumentError, AxisError, KeyError, TypeError) as exc:
        raise ValidationError("/factors", str(exc)) from None


def marginal_gap(aux: AuxJoint, spec: ProblemSpec) -> float:
    """l1 distance between the aux's observable marginal and the target."""
    _, obs = variant_layout(aux.variant, spec)
    if not obs:
        return 0.0
    target = spec.target_joint().marginal(obs)
    return pc.total_variation(aux.joint.marginal(obs), target)


def markov_residuals(aux: AuxJoint) -> dict[str, float]:
    """Conditional mutual informations that vanish by construction."""
    j = aux.joint
    mi = pc.mutual_information
    has_v = j.has("V")
    out: dict[str, float] = {}
    if aux.variant in ("causal", "no-action"):
        out["I(W1;S)"] = mi(j, "W1", "S")
        out["I(W2;Y|W1,S)"] = mi(j, "W2", "Y", ("W1", "S"))
        if has_v:
            out["I(V;S,X|Y,W1,W2)"] = mi(j, "V", ("S", "X"), ("Y", "W1", "W2"))
    elif aux.variant == "two-sided":
        out["I(W1;U,S,Z)"] = mi(j, "W1", ("U", "S", "Z"))
        out["I(W2;Y,Z|W1,U,S)"] = mi(j, "W2", ("Y", "Z"), ("W1", "U", "S"))
        if has_v:
            out["I(V;U,S,X|Y,Z,W1,W2)"] = mi(j, "V", ("U", "S", "X"), ("Y", "Z", "W1", "W2"))
    elif aux.variant == "feedback":
        out["I(W1;S)"] = mi(j, "W1", "S")
        out["I(W2;X,Y1|S,W1,Y2)"] = mi(j, "W2", ("X", "Y1"), ("S", "W1", "Y2"))
        if has_v:
            out["I(V;S,X,Y2|Y1,W1,W2)"] = mi(j, "V", ("S", "X", "Y2"), ("Y1", "W1", "W2"))
    elif aux.variant == "strictly-causal":
        out["I(S;X)"] = mi(j, "S", "X")
        out["I(W2;Y|X,S)"] = mi(j, "W2", "Y", ("X", "S"))
        if has_v:
            out["I(V;S|X,Y,W2)"] = mi(j, "V", "S", ("X", "Y", "W2"))
    else:
        out["I(S;X)"] = mi(j, "S", "X")
    return out


# ---------------------------------------------------------------------------
# Constructors used by tests, search starts and variant reductions
# ---------------------------------------------------------------------------

def _factor_axes(fs: FactorSpec, sizes: Mapping[str, int]):
    return [Alphabet(n, sizes[n]) for n in fs.given], [Alphabet(n, sizes[n]) for n in fs.target]


def random_aux(variant: str, spec: ProblemSpec, rng: np.random.Generator, w1: int = 2, w2: int = 2,
               concentration: float = 1.0) -> AuxJoint:
    """Aux with every free kernel row drawn from a symmetric Dirichlet."""
    sizes = dict(spec.alphabets, W1=w1, W2=1 if variant == "no-action" else w2)
    factors = {}
    for fs in free_factors(variant, spec):
        given, target = _factor_axes(fs, sizes)
        nr = math.prod(a.size for a in given)
        nc = math.prod(a.size for a in target)
        rows = rng.dirichlet(np.full(nc, concentration), size=nr)
        rows /= rows.sum(axis=1, keepdims=True)
        factors[fs.name] = Kernel(given, target, rows.reshape([a.size for a in given + target]),
                                  check=False)
    return compose_aux(variant, factors, spec)


def widen(k: Kernel, extra: list[Alphabet]) -> Kernel:
    """Kernel ignoring the additional conditioning axes ``extra``."""
    fa = sorted(k.from_axes + tuple(extra))
    t = k.table
    for a in sorted(extra):
        pos = fa.index(a)
        t = np.repeat(np.expand_dims(t, pos), a.size, axis=pos)
    return Kernel(fa, k.to_axes, t, check=False)


def degenerate_aux(variant: str, spec: ProblemSpec) -> AuxJoint:
    """Aux with ``|W1| = |W2| = 1`` and the encoder following ``target_x``.

    The receiver action (when present) is drawn from the target averaged over
    what the receiver cannot see, so the V marginal generally differs from the
    target unless ``target_v`` only depends on the outputs.
    """
    sizes = dict(spec.alphabets, W1=1, W2=1)
    target = spec.target_joint()
    factors: dict[str, Kernel] = {}
    for fs in free_factors(variant, spec):
        given, tgt = _factor_axes(fs, sizes)
        aux_axes = [a for a in given if a.name.startswith("W")]
        if fs.name in ("q_w1", "q_w2"):
            factors[fs.name] = Kernel(given, tgt, np.ones([a.size for a in given + tgt]))
        elif fs.name == "q_x" and not fs.given:
            factors[fs.name] = Kernel((), tgt, target.marginal("X").mass)
        elif fs.name == "q_x":
            factors[fs.name] = widen(spec.target_x, aux_axes)
        else:
            seen = [n for n in fs.given if not n.startswith("W")]
            factors[fs.name] = widen(target.conditional("V", seen), aux_axes)
    return compose_aux(variant, factors, spec)


def as_two_sided(spec: ProblemSpec) -> ProblemSpec:
    """Embed a plain problem into the two-sided setting with ``|U| = |Z| = 1``."""
    if spec.kind != "plain":
        raise ArgumentError("only plain problems can be embedded")
    U, Z = Alphabet("U", 1), Alphabet("Z", 1)
    src = pc.product(spec.source, JointDist([U], [1.0]), JointDist([Z], [1.0]))
    tv = widen(spec.target_v, [U, Z]) if spec.target_v is not None else None
    alph = dict(spec.alphabets, U=1, Z=1)
    return ProblemSpec(alph, src, spec.channel, widen(spec.target_x, [U]), tv, spec.distortion, spec.aux_caps)


def lift_to_two_sided(aux: AuxJoint, spec2: ProblemSpec) -> AuxJoint:
    """Reinterpret a causal aux in the embedded two-sided problem."""
    if aux.variant != "causal":
        raise ArgumentError("only causal aux can be lifted")
    U, Z = spec2.alphabet("U"), spec2.alphabet("Z")
    f = aux.factors
    out = {"q_w1": f["q_w1"], "q_w2": widen(f["q_w2"], [U]), "q_x": widen(f["q_x"], [U])}
    if "q_v" in f:
        out["q_v"] = widen(f["q_v"], [Z])
    return compose_aux("two-sided", out, spec2)


def feedback_problem(spec: ProblemSpec, y2_channel: Kernel) -> ProblemSpec:
    """Feedback problem whose forward output ``Y1`` has the law of ``spec``'s ``Y``.

    ``y2_channel`` is a kernel ``(S, X, Y1) -> Y2`` producing the feedback
    signal.  ``target_v`` (if any) is widened to ignore ``Y2``.
    """
    if spec.kind != "plain":
        raise ArgumentError("feedback problems are built from plain ones")
    ch = spec.channel.relabel({"Y": "Y1"})
    base = pc.product_compose(JointDist.uniform(ch.from_axes), ch, y2_channel)
    joint_ch = base.conditional(("Y1", "Y2"), ("S", "X"))
    y2 = y2_channel.to_axes[0]
    alph = {k: v for k, v in spec.alphabets.items() if k != "Y"}
    alph.update(Y1=spec.alphabets["Y"], Y2=y2.size)
    tv = widen(spec.target_v.relabel({"Y": "Y1"}), [y2]) if spec.target_v is not None else None
    return ProblemSpec(alph, spec.source, Kernel(joint_ch.from_axes, joint_ch.to_axes, joint_ch.table),
                       spec.target_x, tv, spec.distortion, spec.aux_caps)


def lift_to_feedback(aux: AuxJoint, fspec: ProblemSpec) -> AuxJoint:
    """Causal aux viewed as a feedback aux whose ``W2`` ignores ``Y2``."""
    if aux.variant != "causal":
        raise ArgumentError("only causal aux can be lifted")
    f = aux.factors
    out = {"q_w1": f["q_w1"], "q_x": f["q_x"], "q_w2": widen(f["q_w2"], [fspec.alphabet("Y2")])}
    if "q_v" in f:
        out["q_v"] = f["q_v"].relabel({"Y": "Y1"})
    return compose_aux("feedback", out, fspec)


def causal_as_strictly_causal(aux: AuxJoint, spec: ProblemSpec) -> AuxJoint:
    """Strictly-causal aux obtained from a causal one whose ``X`` copies ``W1``.

    The causal aux must have ``|W1| = |X|`` and ``Q_{X|S,W1}`` equal to the
    identity map on ``W1``.
    """
    f = aux.factors
    qx = f["q_x"].table
    if aux.variant != "causal" or qx.shape[1] != qx.shape[2] or not np.array_equal(
            qx, np.broadcast_to(np.eye(qx.shape[-1]), qx.shape)):
        raise ArgumentError("causal aux must set X = W1")
    out = {"q_x": f["q_w1"].relabel({"W1": "X"}), "q_w2": f["q_w2"].relabel({"W1": "X"})}
    if "q_v" in f:
        out["q_v"] = f["q_v"].relabel({"W1": "X"})
    return compose_aux("strictly-causal", out, spec)
