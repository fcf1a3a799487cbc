from __future__ import annotations

import itertools

import numpy as np
import pytest

from coordlab import beliefs, codec, model
from coordlab import probcore as pc
from coordlab.errors import ArgumentError, DivergenceInfiniteError, SupportError, ZeroEventError
from coordlab.probcore import Alphabet, JointDist, Kernel

from .conftest import binary_spec

REVEAL = [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]  # Y = (X, S)
USELESS = [[0.5, 0.5]] * 4


def _full_aux(rng, spec=None, w1=2, w2=2):
    spec = spec or binary_spec(rng.dirichlet([2, 2], 4).tolist(), source=tuple(rng.dirichlet([3, 3])), v=False)
    return spec, model.random_aux("causal", spec, rng, w1, w2, concentration=3.0)


def brute_posterior(spec, aux, book, y):
    """P(s^n | y^n) by explicit sums over messages, states and inputs."""
    ps = np.asarray(spec.source.mass)
    qx = np.asarray(aux.factors["q_x"].table)  # (S, W1, X)
    T = spec.channel.rows.reshape(2, 2, -1)   # (S, X, Y)
    n = len(y)
    post = {}
    for m in range(len(book)):
        for s in itertools.product(range(2), repeat=n):
            tot = 1.0 / len(book)
            for i in range(n):
                tot *= ps[s[i]] * sum(qx[s[i], book[m][i], x] * T[s[i], x, y[i]] for x in range(2))
            post[s] = post.get(s, 0.0) + tot
    z = sum(post.values())
    return {k: v / z for k, v in post.items()}


def test_posterior_matches_brute_force():
    rng = np.random.default_rng(4)
    spec, aux = _full_aux(rng, w2=1)
    en = beliefs.random_code(aux, 4, 3, seed=9)
    book = [en.w1[k * 16] for k in range(3)]
    for y in [(0, 1, 1, 0), (1, 1, 1, 1), (0, 0, 1, 0)]:
        post = beliefs.posterior(en, y)
        assert float(np.sum(post.mass)) == pytest.approx(1.0, abs=1e-12)
        brute = brute_posterior(spec, aux, book, y)
        for s, v in brute.items():
            assert post.mass[s] == pytest.approx(v, abs=1e-12)
    # frozen from the brute-force table above
    assert brute[(0, 0, 0, 0)] == pytest.approx(0.0003604474778585693, abs=1e-15)


def test_posterior_ignores_unrelated_channel(rng):
    spec = binary_spec(USELESS, source=(0.3, 0.7), v=False)
    aux = model.random_aux("causal", spec, rng)
    en = beliefs.iid_code(aux, 3)
    post = beliefs.posterior(en, (1, 0, 1))
    prod = pc.product(*[JointDist([Alphabet(n, 2)], [0.3, 0.7]) for n in beliefs.stage_names(3)])
    assert np.allclose(post.mass, prod.mass, atol=1e-12)


def test_posterior_revealing_point_mass(rng):
    spec = binary_spec(REVEAL, v=False)
    aux = model.random_aux("causal", spec, rng)
    en = beliefs.random_code(aux, 3, 2, seed=1)
    for y in [(0, 3, 1), (2, 2, 1)]:
        post = beliefs.posterior(en, y)
        s_true = tuple(v % 2 for v in y)
        assert post.mass[s_true] == pytest.approx(1.0)


def test_posterior_zero_event_and_bad_input(rng):
    spec = binary_spec(REVEAL, v=False)
    S, W1 = Alphabet("S", 2), Alphabet("W1", 1)
    qx = np.zeros((2, 1, 2))
    qx[:, 0, 0] = 1.0  # X always 0
    aux = model.compose_aux("causal", {"q_w1": np.ones(1), "q_w2": np.ones((2, 1, 1)), "q_x": qx}, spec)
    en = beliefs.iid_code(aux, 2)
    with pytest.raises(ZeroEventError):
        beliefs.posterior(en, (2, 0))
    with pytest.raises(ArgumentError):
        beliefs.posterior(en, (0,))


def test_stage_names():
    assert beliefs.stage_names(3) == ["S1", "S2", "S3"]
    assert beliefs.stage_names(12)[0] == "S01"


def test_codes_are_normalized_and_deterministic(rng):
    _, aux = _full_aux(rng)
    for en in (beliefs.iid_code(aux, 3), beliefs.random_code(aux, 3, 4, seed=2)):
        assert en.weights.sum() == pytest.approx(1.0)
        assert en.joint_sy().sum() == pytest.approx(1.0)
    a, b = beliefs.random_code(aux, 3, 4, seed=2), beliefs.random_code(aux, 3, 4, seed=2)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    with pytest.raises(ArgumentError):
        beliefs.iid_code(aux, 0)


def test_iid_code_leakage_is_single_letter(rng):
    _, aux = _full_aux(rng)
    en = beliefs.iid_code(aux, 3)
    assert codec.exact_leakage(en) == pytest.approx(pc.mutual_information(aux.joint, "S", "Y"), abs=1e-9)


def test_audit_matched_code(rng):
    for _ in range(3):
        _, aux = _full_aux(rng)
        a = beliefs.audit_theorem3(beliefs.iid_code(aux, 4), aux, 0.2)
        assert a.holds and a.lhs >= 0
        assert a.lhs == pytest.approx(a.lhs_direct, abs=1e-9)
        assert a.alpha2 == pytest.approx(-np.log2(np.min(aux.joint.conditional("S", ("W1", "W2", "Y")).table)))
        assert 0.0 <= a.p_atypical <= 1.0


def test_audit_random_code_threads(rng):
    _, aux = _full_aux(rng)
    en = beliefs.random_code(aux, 4, 2, seed=5)
    a = beliefs.audit_theorem3(en, aux, 0.3, threads=1)
    b = beliefs.audit_theorem3(en, aux, 0.3, threads=3)
    assert a.to_json() == b.to_json()


def test_audit_degenerate_state(rng):
    spec = model.problem_from_dict({"alphabets": {"S": 1, "X": 2, "Y": 2}, "source": [1.0],
                                    "channel": [[0.8, 0.2], [0.3, 0.7]], "target_x": [[0.5, 0.5]]})
    aux = model.random_aux("causal", spec, rng, 2, 2, concentration=3.0)
    a = beliefs.audit_theorem3(beliefs.iid_code(aux, 3), aux, 0.1)
    assert a.lhs == pytest.approx(0.0, abs=1e-12)
    assert a.leakage - a.info_sw == pytest.approx(0.0, abs=1e-12)


def test_audit_needs_full_support(rng):
    spec = binary_spec(REVEAL, v=False)
    aux = model.random_aux("causal", spec, rng)
    with pytest.raises(SupportError):
        beliefs.audit_theorem3(beliefs.iid_code(aux, 2), aux, 0.1)
    mixed = beliefs.mix_full_support(aux, binary_spec(USELESS, v=False))
    assert np.all(np.asarray(mixed.joint.marginal(("S", "W1", "W2", "X")).mass) > 0)
    with pytest.raises(ArgumentError):
        beliefs.audit_theorem3(beliefs.iid_code(aux, 2), aux, 0.0)


def test_belief_sets_matched(rng):
    spec, aux = _full_aux(rng, w1=1, w2=1)
    en = beliefs.iid_code(aux, 4)
    bs = beliefs.belief_sets(en, aux, alpha=0.05, gamma=0.1, delta=0.3)
    assert np.all(bs.fraction == 1.0)
    assert bs.lhs == pytest.approx(0.0, abs=1e-12)
    assert bs.holds
    full = beliefs.belief_sets(en, aux, alpha=0.05, gamma=1.0, delta=0.3)
    assert np.array_equal(full.in_b, full.typical)


def test_belief_sets_bound(rng):
    for seed in range(4):
        _, aux = _full_aux(rng)
        en = beliefs.random_code(aux, 4, 2, seed=seed)
        bs = beliefs.belief_sets(en, aux, alpha=0.4, gamma=0.5, delta=0.5)
        assert bs.p_bc <= bs.bound + 1e-9
        assert bs.prob.sum() == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        beliefs.belief_sets(en, aux, alpha=0.0, gamma=0.5, delta=0.5)


def _ab_joint(rng, n=2):
    axes = [Alphabet(f"A{i + 1}", 2) for i in range(n)] + [Alphabet(f"B{i + 1}", 2) for i in range(n)]
    return JointDist(axes, rng.dirichlet(np.ones(2 ** (2 * n))).reshape((2,) * (2 * n)))


def _factors(rng, n=2):
    return [Kernel([Alphabet(f"A{i + 1}", 2)], [Alphabet(f"B{i + 1}", 2)], rng.dirichlet([1, 1], 2))
            for i in range(n)]


def test_kl_chain_product_zero(rng):
    qs = _factors(rng)
    pa = JointDist([Alphabet("A1", 2), Alphabet("A2", 2)], rng.dirichlet(np.ones(4)).reshape(2, 2))
    p = pc.product_compose(pa, *qs)
    assert beliefs.kl_chain_check(p, qs) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_kl_chain_gap_is_conditional_information(rng):
    for _ in range(20):
        p = _ab_joint(rng)
        lhs, rhs = beliefs.kl_chain_check(p, _factors(rng))
        cmi = pc.mutual_information(p, "B1", "B2", ("A1", "A2"))
        assert lhs - rhs == pytest.approx(cmi, abs=1e-9)


def test_kl_chain_random_and_support(rng):
    for n in (1, 2, 3):
        for _ in range(5):
            lhs, rhs = beliefs.kl_chain_check(_ab_joint(rng, n), _factors(rng, n))
            assert lhs >= rhs - 1e-12
    qs = _factors(rng)
    t = np.asarray(qs[0].table).copy()
    t[0] = [1.0, 0.0]
    qs[0] = Kernel(qs[0].from_axes, qs[0].to_axes, t)
    with pytest.raises(DivergenceInfiniteError):
        beliefs.kl_chain_check(_ab_joint(rng), qs)
    with pytest.raises(ArgumentError):
        beliefs.kl_chain_check(_ab_joint(rng), [])


def test_distortion_gap_zero_distortion(rng):
    _, aux = _full_aux(rng)
    g = beliefs.distortion_gap(beliefs.iid_code(aux, 3), aux, np.zeros((2, 2)), 0.3, 0.3, 0.3)
    assert (g.n_stage, g.single_letter, g.gap) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
    assert g.bound == 0.0 and g.holds


def test_distortion_gap_uninformative(rng):
    spec = binary_spec(USELESS, source=(0.65, 0.35), v=False)
    aux = model.random_aux("causal", spec, rng, 2, 2, concentration=3.0)
    for en in (beliefs.iid_code(aux, 3), beliefs.random_code(aux, 4, 3, seed=0)):
        g = beliefs.distortion_gap(en, aux, [[0, 1], [1, 0]], 0.3, 0.3, 0.3)
        assert g.n_stage == pytest.approx(0.35, abs=1e-12)
        assert g.single_letter == pytest.approx(0.35, abs=1e-12)
    with pytest.raises(ArgumentError):
        beliefs.distortion_gap(en, aux, [[0, -1], [1, 0]], 0.3, 0.3, 0.3)


def test_distortion_gap_random(rng):
    for seed in range(4):
        _, aux = _full_aux(rng)
        g = beliefs.distortion_gap(beliefs.random_code(aux, 4, 2, seed=seed), aux,
                                   [[0, 1], [1, 0]], 0.3, 0.2, 0.3)
        assert g.holds
