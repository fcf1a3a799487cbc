from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coordlab import probcore as pc
from coordlab.errors import ArgumentError, AxisError, DivergenceInfiniteError, ZeroEventError
from coordlab.probcore import Alphabet, JointDist, Kernel

S, X, Y, A, B, C = (Alphabet(n, 2) for n in "SXYABC")


def bern(name: str, p1: float) -> JointDist:
    return JointDist([Alphabet(name, 2)], [1 - p1, p1])


def copy_kernel(src: Alphabet, dst: str) -> Kernel:
    return Kernel([src], [Alphabet(dst, src.size)], np.eye(src.size))


def hb(p: float) -> float:
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


@st.composite
def joints(draw, names=("A", "B", "C"), max_size=3):
    sizes = [draw(st.integers(1, max_size)) for _ in names]
    n = math.prod(sizes)
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n)))
    if w.sum() <= 0:
        w = np.ones(n)
    return JointDist([Alphabet(a, k) for a, k in zip(names, sizes)], w / w.sum())


# -- construction --------------------------------------------------------------------------

def test_axes_are_canonical():
    p = JointDist([Y, S], [[0.1, 0.2], [0.3, 0.4]])
    assert p.names == ("S", "Y")
    assert p.prob(S=1, Y=0) == pytest.approx(0.2)


def test_mass_validation():
    with pytest.raises(ArgumentError):
        JointDist([S], [0.5, 0.6])
    with pytest.raises(ArgumentError):
        JointDist([S], [1.5, -0.5])
    with pytest.raises(AxisError):
        JointDist([S, Alphabet("S", 3)], np.ones(6) / 6)


def test_alphabet_size_positive():
    with pytest.raises(ArgumentError):
        Alphabet("S", 0)


def test_kernel_rows_checked():
    with pytest.raises(ArgumentError):
        Kernel([S], [X], [[0.5, 0.4], [0.5, 0.5]])


def test_json_round_trip():
    p = JointDist([S, Y], [0.1, 0.2, 0.3, 0.4])
    assert JointDist.from_json(p.dumps()) == p
    k = Kernel([S], [Y], [[0.9, 0.1], [0.2, 0.8]])
    assert Kernel.from_json(k.to_json()) == k
    assert p.to_json() == {"axes": [{"name": "S", "size": 2}, {"name": "Y", "size": 2}],
                           "mass": [0.1, 0.2, 0.3, 0.4]}


def test_cell_cap():
    with pytest.raises(Exception):
        JointDist.uniform([Alphabet(f"A{i}", 10) for i in range(8)])


# -- entropy / information ------------------------------------------------------------------

def test_entropy_examples():
    assert pc.entropy(JointDist.uniform([S]), "S") == pytest.approx(1.0, abs=1e-12)
    assert pc.entropy(JointDist.point([S], [1]), "S") == 0.0
    copy = pc.product_compose(bern("S", 0.3), copy_kernel(S, "Y"))
    assert pc.entropy(copy, "S", "Y") == pytest.approx(0.0, abs=1e-12)


def test_unknown_axis():
    with pytest.raises(AxisError):
        pc.entropy(JointDist.uniform([S]), "Q")


def test_mutual_information_examples():
    ab = pc.product(JointDist.uniform([A]), JointDist.uniform([B]))
    assert pc.mutual_information(ab, "A", "B") == pytest.approx(0.0, abs=1e-12)
    copy = pc.product_compose(JointDist.uniform([S]), copy_kernel(S, "Y"))
    assert pc.mutual_information(copy, "S", "Y") == pytest.approx(1.0, abs=1e-12)


def test_bsc_mutual_information():
    p = pc.product_compose(JointDist.uniform([S]), Kernel([S], [Y], [[0.9, 0.1], [0.1, 0.9]]))
    # brute-force sum over the 4 cells
    cells = {(0, 0): 0.45, (0, 1): 0.05, (1, 0): 0.05, (1, 1): 0.45}
    brute = sum(v * math.log2(v / 0.25) for v in cells.values())
    assert pc.mutual_information(p, "S", "Y") == pytest.approx(brute, abs=1e-12)
    assert pc.mutual_information(p, "S", "Y") == pytest.approx(1 - hb(0.1), abs=1e-12)
    assert pc.mutual_information(p, "S", "Y") == pytest.approx(0.531004406410719, abs=1e-12)


def test_overlapping_sets_rejected():
    p = JointDist.uniform([A, B])
    with pytest.raises(ArgumentError):
        pc.mutual_information(p, "A", ("A", "B"))


@given(joints())
def test_chain_rule(p):
    assert pc.entropy(p, ("A", "B")) == pytest.approx(pc.entropy(p, "A") + pc.entropy(p, "B", "A"), abs=1e-9)


@given(joints())
def test_conditional_mutual_information_identity(p):
    lhs = pc.mutual_information(p, "A", "B", "C")
    rhs = pc.entropy(p, "A", "C") - pc.entropy(p, "A", ("B", "C"))
    assert lhs == pytest.approx(max(rhs, 0.0), abs=1e-9)
    assert lhs >= 0
    assert lhs == pytest.approx(pc.mutual_information(p, "B", "A", "C"), abs=1e-9)


# -- divergence / distance ----------------------------------------------------------------

def test_kl_examples():
    u = JointDist.uniform([S])
    assert pc.kl_divergence(u, u) == 0.0
    expected = 0.5 * math.log2(0.5 / 0.25) + 0.5 * math.log2(0.5 / 0.75)
    assert pc.kl_divergence(u, bern("S", 0.75)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2075187496, abs=1e-9)
    with pytest.raises(DivergenceInfiniteError) as exc:
        pc.kl_divergence(u, JointDist.point([S], [0]))
    assert exc.value.cell == (1,)


def test_total_variation_examples():
    u = JointDist.uniform([S])
    assert pc.total_variation(u, u) == 0.0
    assert pc.total_variation(JointDist.point([S], [0]), JointDist.point([S], [1])) == 2.0
    assert pc.total_variation(u, bern("S", 0.7)) == pytest.approx(0.4, abs=1e-12)
    with pytest.raises(AxisError):
        pc.total_variation(u, JointDist.uniform([Y]))


@given(joints(names=("A", "B")), joints(names=("A", "B")))
def test_pinsker_and_zero_kl(p, q):
    if p.axes != q.axes:
        return
    q2 = JointDist(q.axes, 0.5 * np.asarray(q.mass) + 0.5 / q.mass.size)  # full support
    d = pc.kl_divergence(p, q2)
    tv = pc.total_variation(p, q2)
    assert d >= (tv / 2) ** 2 * (2 / math.log(2)) - 1e-9
    assert pc.kl_divergence(p, p) == 0.0
    if d == 0.0:
        assert tv <= 1e-9


# -- structure ------------------------------------------------------------------------------

def test_marginal_condition_compose():
    u = JointDist.uniform([S, X])
    assert pc.marginalize(u, "S") == JointDist.uniform([S])
    p = pc.product_compose(JointDist.uniform([S]), copy_kernel(S, "Y"))
    post = pc.condition(p, {"Y": 0}).marginal("S")
    assert post == JointDist.point([S], [0])
    with pytest.raises(ZeroEventError):
        pc.condition(pc.product_compose(JointDist.point([S], [0]), copy_kernel(S, "Y")), {"Y": 1})


def test_uniform_chain_has_equal_cells():
    W1, W2, V = Alphabet("W1", 2), Alphabet("W2", 2), Alphabet("V", 2)
    half = lambda given, out: Kernel(given, [out], np.full([a.size for a in given] + [2], 0.5))
    p = pc.product_compose(JointDist.uniform([S]), half([], W1), half([S, W1], W2), half([S, W1], X),
                           half([S, X], Y), half([Y, W1, W2], V))
    assert p.mass.size == 64
    assert np.allclose(p.mass, 1 / 64, atol=1e-15)


def test_conditional_flags_unreachable_rows():
    p = pc.product_compose(JointDist.point([S], [0]), Kernel([S], [Y], [[0.3, 0.7], [0.5, 0.5]]))
    k = p.conditional("Y", "S")
    assert k.unreachable.tolist() == [False, True]
    assert np.allclose(k.table[0], [0.3, 0.7])


# -- typicality -----------------------------------------------------------------------------

def test_typicality_examples():
    assert pc.is_typical([1, 1, 1], JointDist.point([S], [1]), 1e-6)
    assert pc.is_typical("0101", JointDist.uniform([S]), 0.01)
    assert not pc.is_typical([0, 0, 0, 0], JointDist.uniform([S]), 0.5)
    assert pc.typical_distance([0, 0, 0, 0], JointDist.uniform([S])) == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        pc.is_typical([], JointDist.uniform([S]), 0.1)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=30))
def test_large_delta_always_typical(seq):
    q = JointDist.uniform([Alphabet("A", 3)])
    assert pc.is_typical(seq, q, 2 * 3)


def test_joint_sequence_mapping():
    q = JointDist.uniform([S, Y])
    assert pc.is_typical({"S": [0, 0, 1, 1], "Y": [0, 1, 0, 1]}, q, 1e-9)


# -- sampling -------------------------------------------------------------------------------

def test_sample_point_mass_and_determinism():
    seq = pc.sample(7, JointDist.point([S], [1]), 5)
    assert seq.ravel().tolist() == [1] * 5
    q = JointDist.uniform([S, Y])
    assert np.array_equal(pc.sample(3, q, 50), pc.sample(3, q, 50))
    assert not np.array_equal(pc.sample(3, q, 50), pc.sample(4, q, 50))
    assert not np.array_equal(pc.sample(3, q, 50, tag="a"), pc.sample(3, q, 50, tag="b"))
    with pytest.raises(ArgumentError):
        pc.sample(0, q, 0)


def test_streams_are_independent_of_draw_order():
    a = pc.rng_stream(5, "x").random(4)
    pc.rng_stream(5, "y").random(100)
    assert np.array_equal(a, pc.rng_stream(5, "x").random(4))


def test_sample_concentration():
    q = JointDist.uniform([S])
    ok = sum(abs(pc.sample(seed, q, 100_000).mean() - 0.5) <= 0.01 for seed in range(100))
    assert ok >= 99
