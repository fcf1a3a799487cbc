from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from coordlab import probcore as pc
from coordlab.errors import ArgumentError, CapacityError
from coordlab.probcore import Alphabet
from coordlab.search import (Block, Entropies, InnerMin, Negated, Program, Quantity, SearchConfig,
                             block_grid, grid_count, grid_solve, grid_table, project_simplex,
                             simplex_grid, solve)

vectors = hnp.arrays(np.float64, st.integers(1, 7), elements=st.floats(-5, 5))


@given(vectors)
def test_projection_lands_on_simplex(v):
    p = project_simplex(v)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(project_simplex(p), p, atol=1e-12)


@given(vectors, st.integers(0, 2**31))
def test_projection_is_nearest(v, seed):
    p = project_simplex(v)
    q = np.random.default_rng(seed).dirichlet(np.ones(len(v)), size=50)
    assert np.all(((q - v) ** 2).sum(axis=1) >= ((p - v) ** 2).sum() - 1e-9)


def test_projection_batched():
    v = np.array([[[0.2, 0.3, 0.5]], [[2.0, 0.0, 0.0]]])
    assert np.allclose(project_simplex(v), [[[0.2, 0.3, 0.5]], [[1.0, 0.0, 0.0]]])


@pytest.mark.parametrize("n, step", [(2, 0.25), (3, 0.25), (4, 0.5), (3, 0.1)])
def test_simplex_grid_count(n, step):
    g = simplex_grid(n, step)
    k = round(1 / step)
    assert len(g) == math.comb(k + n - 1, n - 1)
    assert np.allclose(g.sum(axis=1), 1.0)
    assert len({tuple(r) for r in g}) == len(g)


def test_simplex_grid_step_must_divide():
    with pytest.raises(ArgumentError):
        simplex_grid(2, 0.3)


def _single(sizes, blocks_spec):
    axes = [Alphabet(n, s) for n, s in sorted(sizes.items())]
    blocks = [Block(name, [a for a in axes if a.name in g], [a for a in axes if a.name in t], axes)
              for name, g, t in blocks_spec]
    return axes, blocks


def test_solve_maximizes_entropy():
    axes, blocks = _single({"X": 3}, [("q", (), ("X",))])
    prog = Program(axes, np.ones(3), blocks, Negated(Quantity.H("X")))
    out = solve(prog, SearchConfig(restarts=8))
    best = out.best()
    assert -best.objective == pytest.approx(math.log2(3), abs=1e-5)


def test_grid_and_capacity():
    axes, blocks = _single({"X": 2}, [("q", (), ("X",))])
    prog = Program(axes, np.ones(2), blocks, Negated(Quantity.H("X")))
    out = grid_solve(prog, SearchConfig(grid=True))
    assert -out.best().objective == pytest.approx(1.0)
    assert grid_count(prog, 0.25) == 5
    with pytest.raises(CapacityError):
        grid_table(prog, 0.25, cap=4)


def test_rate_constraint_respected():
    # smallest entropy allowed by the lower bound
    axes, blocks = _single({"X": 2}, [("q", (), ("X",))])
    prog = Program(axes, np.ones(2), blocks, Quantity.H("X"), [("h", Quantity.H("X"), 0.5)])
    best = solve(prog, SearchConfig(restarts=8)).best()
    assert best.objective == pytest.approx(0.5, abs=1e-4)
    assert best.violation <= 1e-6


def _random_joint(rng, shape):
    return rng.dirichlet(np.ones(int(np.prod(shape)))).reshape((1,) + shape)


@pytest.mark.parametrize("q", [Quantity.H("A", "B"), Quantity.I("A", "B"), Quantity.I("A", "C", "B"),
                               Quantity.I(("A", "C"), "B") - 0.5 * Quantity.H("C")])
def test_quantity_gradient_matches_finite_differences(q, rng):
    names = ("A", "B", "C")
    j = _random_joint(rng, (2, 3, 2))
    g = q.grad(Entropies(j, names))
    g = np.broadcast_to(g, j.shape)
    h = 1e-6
    for _ in range(6):
        idx = (0,) + tuple(rng.integers(0, s) for s in j.shape[1:])
        jp, jm = j.copy(), j.copy()
        jp[idx] += h
        jm[idx] -= h
        fd = (q.value(Entropies(jp, names)) - q.value(Entropies(jm, names)))[0] / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_quantity_matches_probcore(rng):
    names = ("A", "B", "C")
    j = _random_joint(rng, (2, 3, 2))
    jd = pc.JointDist([Alphabet(n, s) for n, s in zip(names, j.shape[1:])], j[0])
    ent = Entropies(j, names)
    assert Quantity.I("A", "C", "B").value(ent)[0] == pytest.approx(pc.mutual_information(jd, "A", "C", "B"))
    assert Quantity.H("A", "C").value(ent)[0] == pytest.approx(pc.entropy(jd, ("A", "C")))


def test_inner_min_value_and_gradient(rng):
    names = ("O", "S")
    d = np.array([[0.0, 1.0, 0.3], [1.0, 0.0, 0.4]])
    j = _random_joint(rng, (3, 2))
    im = InnerMin("S", ("O",), d, names)
    brute = sum(min(sum(j[0, o, s] * d[s, v] for s in range(2)) for v in range(3)) for o in range(3))
    assert im.value(Entropies(j, names))[0] == pytest.approx(brute)
    # gradient of the hard minimum is exact away from ties
    h = 1e-7
    g = np.broadcast_to(im.grad(Entropies(j, names)), j.shape)
    jp = j.copy()
    jp[0, 1, 0] += h
    fd = (im.value(Entropies(jp, names)) - im.value(Entropies(j, names)))[0] / h
    assert g[0, 1, 0] == pytest.approx(fd, abs=1e-5)


def test_block_grid_rows_are_stochastic():
    axes, blocks = _single({"S": 2, "X": 3}, [("q", ("S",), ("X",))])
    g = block_grid(blocks[0], 0.5)
    assert g.shape == (36, 2, 3)
    assert np.allclose(g.sum(axis=-1), 1.0)
