from __future__ import annotations

import itertools

import numpy as np
import pytest

from coordlab import game, model, regions
from coordlab.errors import ArgumentError
from coordlab.search import SearchConfig

from .conftest import binary_spec

USELESS = [[0.5, 0.5]] * 4
REVEAL = [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]  # Y = (X, S)
FAST = SearchConfig(restarts=16)
GRID = SearchConfig(grid=True)


def test_inner_min_uninformative():
    spec = binary_spec(USELESS)
    assert game.inner_min(model.degenerate_aux("no-action", spec), spec)[0] == pytest.approx(0.5)
    spec = binary_spec(USELESS, source=(0.7, 0.3))
    value, dec = game.inner_min(model.degenerate_aux("no-action", spec), spec)
    assert value == pytest.approx(0.3)
    assert np.allclose(dec.table[..., 0], 1.0)


def test_inner_min_revealing(rng):
    spec = binary_spec(REVEAL)
    for _ in range(5):
        aux = model.random_aux("no-action", spec, rng, 2)
        value, dec = game.inner_min(aux, spec)
        assert value == pytest.approx(0.0, abs=1e-12)
        # every row is a point mass
        assert np.all(np.isin(dec.table, (0.0, 1.0)))


def test_inner_min_needs_distortion(rng):
    spec = binary_spec(USELESS, v=False)
    with pytest.raises(ArgumentError):
        game.inner_min(model.degenerate_aux("no-action", spec), spec)


def test_inner_min_relabel_invariant(rng):
    d = np.array([[0.0, 1.0, 0.4], [1.0, 0.0, 0.7]])
    spec = binary_spec(rng.dirichlet([1, 1], 4).tolist(), distortion=d.tolist(),
                       target_v=[[1 / 3] * 3] * 8)
    for _ in range(5):
        aux = model.random_aux("no-action", spec, rng, 3)
        base = game.inner_min(aux, d)[0]
        for perm in itertools.permutations(range(3)):
            assert game.inner_min(aux, d[:, perm])[0] == pytest.approx(base, abs=1e-12)


def test_single_action_alphabet(rng):
    spec = binary_spec(rng.dirichlet([1, 1], 4).tolist(), source=(0.4, 0.6), distortion=[[0.3], [0.7]],
                       target_v=[[1.0]] * 8)
    want = 0.4 * 0.3 + 0.6 * 0.7
    sol = game.solve_maximin(0.0, spec, FAST)
    assert sol.d_star == pytest.approx(want)
    assert game.solve_minimax(0.0, spec, FAST) == pytest.approx(want)
    assert game.solve_minimax(0.0, spec, GRID) == pytest.approx(want)


@pytest.mark.parametrize("cfg", [FAST, GRID], ids=["local", "grid"])
def test_zero_rate_trivial_channels(cfg):
    spec = binary_spec(USELESS)
    sol = game.zero_rate_value(spec, cfg)
    assert sol.status == "ok" and sol.d_star == pytest.approx(0.5)
    assert game.solve_minimax(0.0, spec, cfg) == pytest.approx(0.5, abs=1e-9)
    spec = binary_spec(USELESS, source=(0.7, 0.3))
    assert game.zero_rate_value(spec, cfg).d_star == pytest.approx(0.3)
    spec = binary_spec(REVEAL)
    sol = game.zero_rate_value(spec, cfg)
    assert sol.d_star == pytest.approx(0.0, abs=1e-12)
    assert game.solve_minimax(0.0, spec, cfg) == pytest.approx(0.0, abs=1e-9)


def test_infeasible_rate():
    spec = binary_spec(USELESS)
    assert game.solve_maximin(0.5, spec, FAST).status == "infeasible"
    with pytest.raises(ArgumentError):
        game.solve_maximin(-0.1, spec)


def test_solution_bounds_and_json(rng):
    for _ in range(4):
        p = rng.uniform(0.1, 0.9)
        spec = binary_spec(rng.dirichlet([1, 1], 4).tolist(), source=(p, 1 - p))
        sol = game.solve_maximin(0.0, spec, FAST, with_gap=True)
        assert 0.0 <= sol.d_star <= spec.d_bar
        assert sol.d_star <= 1 - max(p, 1 - p) + 1e-9
        assert sol.gap is not None and sol.gap >= 0
        assert np.all(np.isin(sol.decoder.table, (0.0, 1.0)))
        doc = sol.to_json()
        assert set(doc) >= {"d_star", "gap", "witness", "decoder"}


def test_grid_monotone_in_rate(rng):
    spec = binary_spec(rng.dirichlet([1, 1], 4).tolist(), source=(0.5, 0.5))
    rmax = regions.max_rate("no-action", spec, FAST)
    vals = [game.solve_maximin(f * rmax, spec, GRID) for f in np.linspace(0, 0.8, 5)]
    ok = [v.d_star for v in vals if v.status == "ok"]
    assert len(ok) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(ok, ok[1:]))


def test_one_auxiliary_dominance(rng):
    for _ in range(3):
        p = rng.uniform(0.2, 0.8)
        spec = binary_spec(rng.dirichlet([1, 1], 4).tolist(), source=(p, 1 - p))
        for _ in range(5):
            aux = model.random_aux("causal", spec, rng, 2, 2)
            r = regions.constraints("causal", aux).r_remark_cap
            d_full = game.inner_min(aux, spec, ("W1", "W2", "Y"))[0]
            sol = game.solve_maximin(r, spec, FAST)
            assert sol.status == "ok"
            assert d_full <= sol.d_star + 1e-6
