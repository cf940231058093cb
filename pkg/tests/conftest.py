import itertools
from pathlib import Path

import numpy as np
import pytest

from modalx.frame import Frame, load_frame
from modalx.sampler import Dataset
from modalx.symmetry import OrbitPartition

DATA = Path(__file__).parent / "data"


def frame_file(name: str) -> Path:
    return DATA / f"{name}.frame"


@pytest.fixture(scope="session")
def frames():
    return {name: load_frame(frame_file(name))
            for name in ("example1", "example2", "chain", "twopair", "small")}


def brute_automorphisms(frame: Frame):
    """Every bijection that preserves the relation, by exhaustive search."""
    r = frame.relation
    out = []
    for p in itertools.permutations(range(frame.size)):
        p = np.array(p)
        if np.array_equal(r[np.ix_(p, p)], r):
            out.append(tuple(int(x) for x in p))
    return out


def brute_stabilizer(frame: Frame):
    return [p for p in brute_automorphisms(frame) if p[frame.designated] == frame.designated]


def brute_orbits(perms, on):
    seen, blocks = set(), []
    for w in sorted(on):
        if w in seen:
            continue
        block = {p[w] for p in perms}
        seen |= block
        blocks.append(sorted(block))
    return blocks


def brute_restricted_order(perms, orbit):
    pts = sorted(orbit)
    return len({tuple(p[x] for x in pts) for p in perms})


def relation_frame(rel, designated=0, name="f") -> Frame:
    rel = np.asarray(rel, dtype=bool)
    return Frame(tuple(f"v{i}" for i in range(len(rel))), rel, designated, name)


def twin_frame(rng: np.random.Generator, max_worlds: int = 7) -> Frame:
    """Random reflexive frame built from interchangeable twin classes.

    Worlds in one class share their relation to everything else, so each class
    lies inside a stabilizer orbit and the group is never trivial by accident.
    """
    sizes = []
    budget = int(rng.integers(2, max_worlds))
    while budget > 0:
        s = int(rng.integers(1, min(3, budget) + 1))
        sizes.append(s)
        budget -= s
    cls = np.repeat(np.arange(len(sizes)), sizes)
    c = len(sizes)
    between = rng.random((c, c)) < 0.5
    inside = rng.random(c) < 0.5
    n = len(cls) + 1
    rel = np.zeros((n, n), dtype=bool)
    rel[0, :] = True
    for i in range(1, n):
        for j in range(1, n):
            a, b = cls[i - 1], cls[j - 1]
            rel[i, j] = inside[a] if a == b else between[a, b]
    np.fill_diagonal(rel, True)
    return relation_frame(rel, 0, "twins")


def two_orbit_frame(na: int, nb: int) -> Frame:
    """w0 sees everything; the a-worlds form one S5 cluster, the b-worlds see only themselves."""
    n = 1 + na + nb
    rel = np.eye(n, dtype=bool)
    rel[0, :] = True
    rel[1:1 + na, 1:1 + na] = True
    return relation_frame(rel, 0, "two_orbits")


def adversarial_world_theta(n, seed, size=4):
    """Orbit worlds with different success rates: 0.2 at the first world, 0.8 elsewhere."""
    rng = np.random.default_rng(seed)
    theta = np.full(size, 0.8)
    theta[0] = 0.2
    out = np.zeros((n, size + 1), dtype=np.int64)
    out[:, 1:] = rng.random((n, size)) < theta
    return Dataset(out, tuple(f"v{i}" for i in range(size + 1)), ("p",), seed=seed)


def adversarial_markov(n, seed, size=4, stay=0.9):
    """Outcomes along the world order follow a two-state chain that stays put with prob 0.9."""
    rng = np.random.default_rng(seed)
    out = np.zeros((n, size + 1), dtype=np.int64)
    out[:, 1] = rng.random(n) < 0.5
    for j in range(2, size + 1):
        flip = rng.random(n) >= stay
        out[:, j] = out[:, j - 1] ^ flip
    return Dataset(out, tuple(f"v{i}" for i in range(size + 1)), ("p",), seed=seed)


def partition_of(blocks) -> OrbitPartition:
    return OrbitPartition.from_blocks(blocks)


def random_invariant_measures(count: int = 20, seed: int = 2024):
    """Symmetrized Dirichlet measures on random twin frames with k*|W| <= 12.

    Returns ``(frame, group, report, measure)`` tuples where ``report`` is the
    symmetry analysis of the frame.
    """
    from modalx.measure import AtomSet, ExactMeasure, symmetrize
    from modalx.symmetry import analyze

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        f = twin_frame(rng, max_worlds=7)
        rep = analyze(f)
        if max(rep.partition.sizes(), default=0) < 2:
            continue
        k = int(rng.integers(1, 12 // f.size + 1))
        raw = rng.dirichlet(np.full(1 << (k * f.size), 0.3))
        p = symmetrize(ExactMeasure(f, AtomSet.of_size(k), raw), rep.group)
        out.append((f, rep.group, rep, p))
    return out


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
