import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modalx.frame import accessible_cluster, parse_frame
from modalx.symmetry import (
    SymmetryError,
    analyze,
    automorphism_group,
    check_ext,
    compose,
    generate_elements,
    identity,
    inverse,
    is_automorphism,
    is_point_homogeneous,
    orbit_partition,
    restrict,
    restricted_order,
    schreier_sims,
    stabilizer,
)

from conftest import (
    brute_automorphisms,
    brute_orbits,
    brute_restricted_order,
    brute_stabilizer,
    relation_frame,
    twin_frame,
    two_orbit_frame,
)


def names(frame, blocks):
    return [[frame.worlds[w] for w in sorted(b)] for b in blocks]


@pytest.mark.parametrize("name,aut,stab", [
    ("example1", 120, 24),
    ("example2", 12, 12),
    ("chain", 1, 1),
    ("twopair", 8, 8),
    ("small", 2, 2),
])
def test_orders_match_oracle(frames, name, aut, stab):
    f = frames[name]
    assert len(brute_automorphisms(f)) == aut
    assert len(brute_stabilizer(f)) == stab
    ga, gs = automorphism_group(f), stabilizer(f)
    assert ga.order == aut and gs.order == stab
    assert set(gs.elements) == set(brute_stabilizer(f))
    assert set(ga.elements) == set(brute_automorphisms(f))


def test_universal_two_worlds():
    f = parse_frame("world a\nworld b\ndesignated a\nedge * *\n")
    assert automorphism_group(f).order == 2
    assert stabilizer(f).order == 1


@pytest.mark.parametrize("name,expected", [
    ("example2", [["a1", "a2", "a3"], ["b1", "b2"]]),
    ("chain", [["t1"], ["t2"], ["t3"], ["t4"]]),
    ("example1", [["u1", "u2", "u3", "u4"]]),
    ("twopair", [["p1", "p2", "q1", "q2"]]),
])
def test_cluster_orbits(frames, name, expected):
    f = frames[name]
    g = stabilizer(f)
    on = accessible_cluster(f) - {f.designated}
    part = orbit_partition(g, on)
    assert names(f, part.blocks) == expected
    assert names(f, [set(b) for b in brute_orbits(brute_stabilizer(f), on)]) == expected


def test_chain_orbits_from_every_world(frames):
    f = frames["chain"]
    part = orbit_partition(stabilizer(f), range(5))
    assert part.sizes() == [1] * 5


def test_restrict_example2(frames):
    f = frames["example2"]
    g = stabilizer(f)
    a = [f.index(x) for x in ("a1", "a2", "a3")]
    r = restrict(g, a)
    assert r.degree == 3 and r.order == 6
    assert r.order == brute_restricted_order(brute_stabilizer(f), a)


def test_restrict_trivial(frames):
    f = frames["chain"]
    r = restrict(stabilizer(f), [2])
    assert r.order == 1 and r.degree == 1


def test_restrict_twopair(frames):
    f = frames["twopair"]
    g = stabilizer(f)
    orbit = [1, 2, 3, 4]
    assert restrict(g, orbit).order == 8
    assert brute_restricted_order(brute_stabilizer(f), orbit) == 8


def test_restrict_rejects_non_invariant(frames):
    f = frames["example2"]
    with pytest.raises(SymmetryError):
        restrict(stabilizer(f), [1, 4])
    with pytest.raises(SymmetryError):
        orbit_partition(stabilizer(f), [1, 4])


def test_ext(frames):
    f = frames["example2"]
    g = stabilizer(f)
    a = check_ext(g, [1, 2, 3])
    assert a.holds and a.restricted_order == 6 and a.orbit_size == 3
    single = check_ext(stabilizer(frames["chain"]), [3])
    assert single.holds and single.restricted_order == 1
    t = check_ext(stabilizer(frames["twopair"]), [1, 2, 3, 4])
    assert not t.holds and t.restricted_order == 8
    assert "8" in t.reason and "24" in t.reason


@pytest.mark.parametrize("name,expected", [
    ("example1", True), ("example2", False), ("chain", False), ("twopair", True),
])
def test_point_homogeneous(frames, name, expected):
    f = frames[name]
    assert is_point_homogeneous(stabilizer(f), accessible_cluster(f), f.designated) is expected


def test_analyze_reports_designated_orbit(frames):
    rep = analyze(frames["example2"])
    d = rep.to_dict()
    assert d["designated_orbit"]["holds"] and d["designated_orbit"]["designated_orbit"]
    assert d["orbit_sizes"] == [3, 2] and d["ext_all"]
    assert d["stabilizer_order"] == 12


def test_large_universal_frame_without_enumeration():
    n = 30
    f = relation_frame(np.ones((n, n), bool))
    g = stabilizer(f)
    assert g.order == math.factorial(n - 1)
    assert g.elements is None
    assert all(is_automorphism(f, p) for p in g.generators)
    assert check_ext(g, range(1, n)).holds


def test_membership_by_sifting():
    n = 9
    f = relation_frame(np.ones((n, n), bool))
    g = stabilizer(f, enum_bound=10)
    assert not g.enumerated
    assert (0, 2, 1, 3, 4, 5, 6, 7, 8) in g
    assert (1, 0, 2, 3, 4, 5, 6, 7, 8) not in g


def test_perm_helpers():
    p, q = (1, 2, 0), (0, 2, 1)
    assert compose(p, q) == tuple(p[q[i]] for i in range(3))
    assert compose(p, inverse(p)) == identity(3)


@pytest.mark.parametrize("gens,degree,order", [
    ([(1, 0, 2, 3), (1, 2, 3, 0)], 4, 24),
    ([(1, 2, 3, 0)], 4, 4),
    ([(1, 0, 2, 3, 4, 5), (0, 1, 3, 2, 4, 5), (2, 3, 0, 1, 4, 5)], 6, 8),
    ([(1, 2, 0, 3, 4), (0, 1, 2, 4, 3)], 5, 6),
    ([], 3, 1),
])
def test_schreier_sims_matches_closure(gens, degree, order):
    _, transversals, _ = schreier_sims(gens, degree)
    assert math.prod(len(t) for t in transversals) == order
    assert len(generate_elements(gens, degree)) == order


perms = st.integers(2, 7).flatmap(
    lambda n: st.lists(st.permutations(list(range(n))), min_size=0, max_size=3).map(
        lambda ps: (n, [tuple(p) for p in ps])))


@settings(max_examples=150, deadline=None)
@given(perms)
def test_schreier_sims_random(arg):
    n, gens = arg
    _, transversals, _ = schreier_sims(gens, n)
    assert math.prod(len(t) for t in transversals) == len(generate_elements(gens, n))


frames_small = st.integers(1, 7).flatmap(lambda n: arrays(bool, (n, n)))


@settings(max_examples=120, deadline=None)
@given(frames_small)
def test_automorphisms_match_oracle(rel):
    f = relation_frame(rel)
    g = automorphism_group(f)
    brute = set(brute_automorphisms(f))
    assert set(g.elements) == brute and g.order == len(brute)
    s = stabilizer(f)
    assert set(s.elements) == {p for p in brute if p[0] == 0}


@pytest.mark.parametrize("seed", range(25))
def test_twin_frames_against_oracle(seed):
    f = twin_frame(np.random.default_rng(seed))
    g = stabilizer(f)
    brute = brute_stabilizer(f)
    assert set(g.elements) == set(brute)
    # every element preserves the relation on all pairs
    r = f.relation
    for p in g.elements:
        p = np.array(p)
        assert np.array_equal(r[np.ix_(p, p)], r)
    on = accessible_cluster(f) - {0}
    part = orbit_partition(g, on)
    assert [sorted(b) for b in part.blocks] == brute_orbits(brute, on)
    for gen in g.generators:
        for b in part.blocks:
            assert {gen[w] for w in b} == set(b)
    for i, b in enumerate(part.blocks):
        rep = check_ext(g, b, i)
        assert rep.restricted_order == brute_restricted_order(brute, b)
        # search path and generator path agree
        assert restricted_order(g, b) == restrict(g, b).order
        assert rep.holds == (rep.restricted_order == math.factorial(len(b)))
        if rep.holds and len(b) >= 2:
            pts = sorted(b)
            for x in pts:
                for y in pts:
                    assert any(p[x] == y and p[y] == x for p in g.elements)


def test_search_is_deterministic(frames):
    f = frames["example2"]
    assert stabilizer(f).generators == stabilizer(f).generators
    assert analyze(f).to_dict() == analyze(f).to_dict()


def test_restricted_order_large_orbits():
    f = two_orbit_frame(40, 30)
    rep = analyze(f)
    assert rep.partition.sizes() == [40, 30]
    assert rep.group.order == math.factorial(40) * math.factorial(30)
    assert all(e.holds for e in rep.ext)
    assert restricted_order(rep.group, rep.partition.blocks[1]) == math.factorial(30)
