import itertools
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalx.hierspec import parse_spec
from modalx.measure import (
    AtomSet,
    ExactMeasure,
    MeasureError,
    act,
    check_invariance_exact,
    ergodic_decompose,
    exact_hier_measure,
    joint_marginal,
    marginal,
    pushforward,
    symmetrize,
    valuation_from_index,
    valuation_index,
)
from modalx.symmetry import analyze, compose, stabilizer

from conftest import partition_of, random_invariant_measures, relation_frame

K1 = AtomSet.of_size(1)


@pytest.fixture(scope="module")
def invariant_measures():
    return random_invariant_measures()


def test_index_layout():
    # world-major, atom-minor: bit k*w + l
    assert valuation_index([1, 0, 2], 2) == 1 + (2 << 4)
    assert valuation_from_index(valuation_index([3, 1, 2], 2), 3, 2) == (3, 1, 2)


def test_act_examples():
    assert act((0, 1, 2), (1, 0, 3)) == (1, 0, 3)
    assert act((0, 2, 1), (0, 1, 0)) == (0, 0, 1)
    cyc = (1, 2, 0)
    v = (1, 0, 0)
    assert act(cyc, act(cyc, act(cyc, v))) == v
    with pytest.raises(MeasureError):
        act((0, 1), (1, 0, 0))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.permutations(list(range(n))), st.permutations(list(range(n))),
    st.lists(st.integers(0, 3), min_size=n, max_size=n))))
def test_act_is_group_action(arg):
    s, p, v = (tuple(x) for x in arg)
    assert act(tuple(range(len(v))), v) == v
    assert act(s, act(p, v)) == act(compose(s, p), v)
    # outcome at w moves to perm[w]
    out = act(p, v)
    assert all(out[p[w]] == v[w] for w in range(len(v)))


def test_pushforward(frames):
    f = frames["small"]
    g = stabilizer(f)
    swap = g.generators[0]
    u = ExactMeasure.uniform(f, K1)
    assert np.array_equal(pushforward(u, swap).probs, u.probs)
    v = (0, 1, 0)
    pm = ExactMeasure.point_mass(f, K1, v)
    moved = pushforward(pm, swap)
    assert moved.prob(act(swap, v)) == 1.0
    rng = np.random.default_rng(0)
    p = ExactMeasure(f, K1, rng.dirichlet(np.ones(8)))
    back = pushforward(pushforward(p, swap), tuple(np.argsort(swap)))
    assert np.array_equal(back.probs, p.probs)
    assert pushforward(p, swap).probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_symmetrize_examples(frames):
    f = frames["small"]
    g = stabilizer(f)
    pm = ExactMeasure.point_mass(f, K1, (0, 1, 0))
    s = symmetrize(pm, g)
    assert s.prob((0, 1, 0)) == 0.5 and s.prob((0, 0, 1)) == 0.5
    u = ExactMeasure.uniform(f, K1)
    assert np.allclose(symmetrize(u, g).probs, u.probs, atol=1e-15)


def test_symmetrize_needs_enumeration(frames):
    f = frames["example1"]
    g = stabilizer(f, enum_bound=5)
    with pytest.raises(MeasureError):
        symmetrize(ExactMeasure.uniform(f, K1), g)


def test_invariance_check(frames):
    f = frames["small"]
    g = stabilizer(f)
    assert check_invariance_exact(ExactMeasure.uniform(f, K1), g) == (True, 0.0)
    ok, dev = check_invariance_exact(ExactMeasure.point_mass(f, K1, (0, 1, 0)), g)
    assert not ok and dev == 1.0


def test_symmetrize_idempotent(invariant_measures):
    for f, g, _, p in invariant_measures:
        q = symmetrize(p, g)
        assert np.max(np.abs(q.probs - p.probs)) <= 1e-12
        assert check_invariance_exact(p, g)[0]


def test_small_frame_decomposition(frames):
    f = frames["small"]
    g = stabilizer(f)
    dec = ergodic_decompose(ExactMeasure.uniform(f, K1), g)
    assert len(dec) == 6
    sizes = sorted(len(c.support) for c in dec.components)
    assert sizes == [1, 1, 1, 1, 2, 2]
    w = sorted(Fraction(c.weight).limit_denominator(64) for c in dec.components)
    assert w == [Fraction(1, 8)] * 4 + [Fraction(1, 4)] * 2
    assert np.max(np.abs(dec.reconstruct().probs - dec.template.probs)) <= 1e-12


def test_decompose_trivial_group(frames):
    f = frames["chain"]
    g = stabilizer(f)
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(32))
    probs[rng.random(32) < 0.3] = 0
    p = ExactMeasure(f, K1, probs / probs.sum())
    dec = ergodic_decompose(p, g)
    assert len(dec) == int(np.count_nonzero(p.probs))
    for c in dec.components:
        assert len(c.support) == 1 and c.weight == p.probs[c.support[0]]


def test_decompose_uniform_weights(frames):
    f = frames["example2"]
    g = stabilizer(f)
    u = ExactMeasure.uniform(f, K1)
    dec = ergodic_decompose(u, g)
    for c in dec.components:
        assert c.weight == pytest.approx(len(c.support) / 64, abs=1e-15)


def test_decompose_rejects_non_invariant(frames):
    f = frames["small"]
    with pytest.raises(MeasureError, match="not invariant"):
        ergodic_decompose(ExactMeasure.point_mass(f, K1, (0, 1, 0)), stabilizer(f))


def test_decomposition_components(invariant_measures):
    for f, g, _, p in invariant_measures:
        dec = ergodic_decompose(p, g)
        assert abs(dec.weights.sum() - 1) <= 1e-12
        assert np.max(np.abs(dec.reconstruct().probs - p.probs)) <= 1e-12
        labels = dec.component_of()
        assert set(np.flatnonzero(labels >= 0)) == set(np.flatnonzero(p.probs > 0))
        for c in dec.components:
            m = c.measure(p)
            assert check_invariance_exact(m, g)[0]
            # the support is exactly one orbit of valuations
            orbit = {valuation_index(act(h, valuation_from_index(int(c.support[0]), f.size, p.k)), p.k)
                     for h in g.elements}
            assert orbit == set(int(x) for x in c.support)


def test_rigidity_exact(invariant_measures):
    for f, g, rep, p in invariant_measures:
        for block in rep.partition.blocks:
            ref = marginal(p, min(block))
            for w in block:
                assert np.max(np.abs(marginal(p, w) - ref)) <= 1e-12


def test_exchangeability_exact(invariant_measures):
    checked = 0
    for f, g, rep, p in invariant_measures:
        for block, ext in zip(rep.partition.blocks, rep.ext):
            if not ext.holds:
                continue
            for m in (2, 3):
                for tup in itertools.combinations(sorted(block), m):
                    base = joint_marginal(p, tup)
                    for perm in itertools.permutations(tup):
                        assert np.max(np.abs(joint_marginal(p, perm) - base)) <= 1e-12
                        checked += 1
    assert checked > 0


def test_marginal_examples(frames):
    f = frames["small"]
    assert np.allclose(marginal(ExactMeasure.uniform(f, K1), 1), [0.5, 0.5])
    spec = parse_spec("atoms = p\ndesignated = point(bernoulli(0.5))\norbit 0: prior = bernoulli(0.2)\n")
    p = exact_hier_measure(spec, analyze(f).partition, f)
    assert np.allclose(marginal(p, 1), [0.8, 0.2], atol=1e-15)
    with pytest.raises(MeasureError):
        marginal(p, 3)


def test_hier_point_half(frames):
    f = frames["small"]
    spec = parse_spec("atoms = p\norbit 0: prior = bernoulli(1/2)\n")
    p = exact_hier_measure(spec, analyze(f).partition, f)
    pair = joint_marginal(p, [1, 2])
    assert np.allclose(pair, 0.25, atol=1e-15)


def test_hier_mixture_value(frames):
    f = frames["small"]
    spec = parse_spec("atoms = p\norbit 0: prior = mixture(1/2: bernoulli(0.2), 1/2: bernoulli(0.8))\n")
    p = exact_hier_measure(spec, analyze(f).partition, f)
    both = joint_marginal(p, [1, 2])[3]
    # brute force over prior atoms and valuations
    brute = 0.0
    for theta in (0.2, 0.8):
        for v in itertools.product([0, 1], repeat=3):
            if v[1] == v[2] == 1:
                brute += 0.5 * (0.5 if v[0] else 0.5) * theta * theta
    assert both == pytest.approx(0.34, abs=1e-12)
    assert both == pytest.approx(brute, abs=1e-12)


def test_hier_independent_factorizes(frames):
    f = frames["example2"]
    spec = parse_spec("atoms = p\norbit 0: prior = bernoulli(0.2)\norbit 1: prior = bernoulli(0.8)\n")
    p = exact_hier_measure(spec, analyze(f).partition, f)
    j = joint_marginal(p, [1, 4]).reshape(2, 2)  # index = a + 2 b
    ma, mb = j.sum(axis=0), j.sum(axis=1)
    assert np.allclose(j, np.outer(mb, ma), atol=1e-15)
    assert ma[1] == pytest.approx(0.2) and mb[1] == pytest.approx(0.8)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_hier_matches_binary_mixture_formula(n):
    # one orbit of n worlds plus w0; P(s successes in a given pattern) = sum_j w_j t_j^s (1-t_j)^(n-s)
    rel = np.ones((n + 1, n + 1), bool)
    f = relation_frame(rel)
    part = partition_of([range(1, n + 1)])
    weights, thetas = [0.3, 0.5, 0.2], [0.1, 0.45, 0.9]
    comps = ", ".join(f"{w}: bernoulli({t})" for w, t in zip(weights, thetas))
    spec = parse_spec(f"atoms = p\ndesignated = point(bernoulli(0.25))\norbit 0: prior = mixture({comps})\n")
    p = exact_hier_measure(spec, part, f)
    orbit_law = joint_marginal(p, list(range(1, n + 1)))
    count = np.zeros(n + 1)
    for idx, mass in enumerate(orbit_law):
        s = bin(idx).count("1")
        expected = sum(w * t**s * (1 - t) ** (n - s) for w, t in zip(weights, thetas))
        assert mass == pytest.approx(expected, abs=1e-14)
        count[s] += mass
    for s in range(n + 1):
        expected = comb(n, s) * sum(w * t**s * (1 - t) ** (n - s) for w, t in zip(weights, thetas))
        assert count[s] == pytest.approx(expected, abs=1e-13)
    assert marginal(p, 0)[1] == pytest.approx(0.25)


def test_hier_measure_is_invariant(frames):
    f = frames["example2"]
    rep = analyze(f)
    spec = parse_spec(
        "atoms = p, q\ncoupling = joint\n"
        "joint 0.4: 0 = bernoulli(0.1, 0.7), 1 = full(0.1, 0.2, 0.3, 0.4)\n"
        "joint 0.6: 0 = bernoulli(0.9, 0.5), 1 = full(0.25, 0.25, 0.25, 0.25)\n")
    p = exact_hier_measure(spec, rep.partition, f)
    assert abs(p.probs.sum() - 1) <= 1e-12
    assert check_invariance_exact(p, rep.group)[0]
    for block in rep.partition.blocks:
        ref = marginal(p, min(block))
        assert all(np.max(np.abs(marginal(p, w) - ref)) <= 1e-12 for w in block)


def test_hier_rejects_continuous_prior(frames):
    f = frames["small"]
    spec = parse_spec("atoms = p\norbit 0: prior = beta(1, 1)\n")
    with pytest.raises(MeasureError):
        exact_hier_measure(spec, analyze(f).partition, f)


def test_size_cap():
    f = relation_frame(np.ones((13, 13), bool))
    with pytest.raises(MeasureError):
        ExactMeasure.uniform(f, K1)
    g = relation_frame(np.ones((7, 7), bool))
    with pytest.raises(MeasureError):
        ExactMeasure.uniform(g, AtomSet.of_size(4))


def test_measure_validation(frames):
    f = frames["small"]
    with pytest.raises(MeasureError):
        ExactMeasure(f, K1, np.full(8, 0.2))
    with pytest.raises(MeasureError):
        ExactMeasure(f, K1, np.array([1.5, -0.5, 0, 0, 0, 0, 0, 0]))
    with pytest.raises(MeasureError):
        ExactMeasure(f, K1, np.ones(4) / 4)


def test_csv_round_trip(tmp_path, invariant_measures):
    f, _, _, p = invariant_measures[0]
    path = tmp_path / "m.csv"
    p.to_csv(path)
    q = ExactMeasure.from_csv(path, f, p.atoms)
    assert np.array_equal(q.probs, p.probs)


@pytest.mark.parametrize("body,fragment", [
    ("index,p\n0,1\n", "header"),
    ("valuation_index,probability\n0,0.5\n0,0.5\n", "duplicate"),
    ("valuation_index,probability\n9,1\n", ":2: index 9 outside"),
    ("valuation_index,probability\nx,1\n", ":2: malformed"),
])
def test_csv_errors(tmp_path, frames, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(MeasureError, match=fragment):
        ExactMeasure.from_csv(path, frames["small"], K1)
