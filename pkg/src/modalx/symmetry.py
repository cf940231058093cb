"""Automorphisms, stabilizers and orbits of finite frames.

Permutations are tuples of images: ``p[i]`` is the image of point ``i``.
``compose(p, q)`` is ``p`` after ``q``.

The automorphism search builds a stabilizer chain along the base
``fixed points + remaining points ascending``. For each level it looks for
one automorphism per missing orbit point using individualization and
colour refinement on two copies of the frame; leaves are verified
exhaustively, so refinement only ever prunes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .frame import Frame, accessible_cluster

__all__ = [
    "DEFAULT_ENUM_BOUND",
    "ExtReport",
    "OrbitPartition",
    "PermGroup",
    "SymmetryError",
    "SymmetryReport",
    "analyze",
    "automorphism_group",
    "check_ext",
    "compose",
    "generate_elements",
    "identity",
    "inverse",
    "is_automorphism",
    "is_point_homogeneous",
    "orbit_partition",
    "restrict",
    "restricted_order",
    "schreier_sims",
    "stabilizer",
]

DEFAULT_ENUM_BOUND = 10**5

Perm = tuple[int, ...]


class SymmetryError(ValueError):
    pass


def identity(n: int) -> Perm:
    return tuple(range(n))


def compose(p: Perm, q: Perm) -> Perm:
    return tuple(p[i] for i in q)


def inverse(p: Perm) -> Perm:
    out = [0] * len(p)
    for i, x in enumerate(p):
        out[x] = i
    return tuple(out)


def is_automorphism(frame: Frame, p) -> bool:
    p = np.asarray(p, dtype=np.intp)
    if sorted(p.tolist()) != list(range(frame.size)):
        return False
    r = frame.relation
    return bool(np.array_equal(r[np.ix_(p, p)], r))


@dataclass(frozen=True)
class PermGroup:
    degree: int
    generators: tuple[Perm, ...]
    order: int
    elements: tuple[Perm, ...] | None = None
    base: tuple[int, ...] = ()
    transversals: tuple[dict, ...] = field(default=(), repr=False, compare=False)
    # search context: the frame and the points fixed by every element
    frame: Frame | None = field(default=None, repr=False, compare=False)
    fixed: tuple[int, ...] = field(default=(), repr=False, compare=False)

    @property
    def enumerated(self) -> bool:
        return self.elements is not None

    def __contains__(self, p) -> bool:
        p = tuple(p)
        if len(p) != self.degree:
            return False
        if self.elements is not None:
            return p in set(self.elements)
        if self.order > 1 and not self.transversals:
            raise SymmetryError("membership test needs an enumeration or a stabilizer chain")
        # sift through the stabilizer chain
        for b, trans in zip(self.base, self.transversals):
            x = p[b]
            if x not in trans:
                return False
            p = compose(inverse(trans[x]), p)
        return p == identity(self.degree)


def _orbit_transversal(b: int, gens, n: int) -> dict[int, Perm]:
    trans = {b: identity(n)}
    queue = [b]
    for y in queue:
        t = trans[y]
        for g in gens:
            z = g[y]
            if z not in trans:
                trans[z] = compose(g, t)
                queue.append(z)
    return trans


def _elements_from_chain(n: int, transversals) -> tuple[Perm, ...]:
    reps = [[t[x] for x in sorted(t)] for t in transversals]
    out = []
    for combo in product(*reps):
        g = identity(n)
        for u in combo:
            g = compose(g, u)
        out.append(g)
    return tuple(sorted(out))


def generate_elements(generators, degree: int, limit: int | None = None) -> tuple[Perm, ...]:
    """Closure of ``generators`` by breadth-first multiplication."""
    e = identity(degree)
    seen = {e}
    queue = [e]
    for g in queue:
        for s in generators:
            h = compose(s, g)
            if h not in seen:
                seen.add(h)
                queue.append(h)
                if limit is not None and len(seen) > limit:
                    raise SymmetryError(f"group larger than {limit}")
    return tuple(sorted(seen))


# -- colour refinement -----------------------------------------------------


def _refine(adj: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Equitable refinement; colour ids are a fixed function of each signature.

    A signature is (colour, neighbour counts per colour in, out). Rows are
    hashed to one integer with fixed weights; any deterministic function of
    the signature commutes with automorphisms, so a hash collision could only
    make the colouring coarser, never wrong.
    """
    n = len(colors)
    ncol = int(colors.max()) + 1
    colors = np.unique(colors, return_inverse=True)[1].reshape(-1)
    while True:
        onehot = np.zeros((n, ncol))
        onehot[np.arange(n), colors] = 1.0
        sig = np.concatenate([colors[:, None], adj @ onehot, adj.T @ onehot], axis=1).astype(np.int64)
        h = sig @ _weights(sig.shape[1])
        _, new = np.unique(h, return_inverse=True)
        new = new.reshape(-1)
        k = int(new.max()) + 1
        if k == ncol:
            return new
        colors, ncol = new, k


_WEIGHTS = np.random.default_rng(0x5EED).integers(1, 2**62, size=64, dtype=np.int64)


def _weights(m: int) -> np.ndarray:
    global _WEIGHTS
    if m > len(_WEIGHTS):
        extra = np.random.default_rng(len(_WEIGHTS)).integers(1, 2**62, size=2 * m, dtype=np.int64)
        _WEIGHTS = np.concatenate([_WEIGHTS, extra])
    return _WEIGHTS[:m]


class _PairSearch:
    """Find one automorphism extending a partial point assignment.

    Works on two disjoint copies of the frame; a pair ``(v, y)`` means
    "``v`` in the left copy maps to ``y`` in the right copy".
    """

    def __init__(self, frame: Frame):
        self.frame = frame
        n = frame.size
        self.n = n
        r = frame.relation.astype(float)
        adj = np.zeros((2 * n, 2 * n))
        adj[:n, :n] = r
        adj[n:, n:] = r
        self.adj = adj
        self.single = r
        self.base_colors = _refine(r, np.diag(frame.relation).astype(np.int64))

    def prefix_colors(self, prefix) -> np.ndarray:
        """Refined colouring of one copy with ``prefix`` individualized in order."""
        colors = self.base_colors
        for v in prefix:
            colors = colors.copy()
            colors[v] = colors.max() + 1
            colors = _refine(self.single, colors)
        return colors

    def find(self, colors: np.ndarray, v: int, y: int) -> Perm | None:
        """Automorphism respecting ``colors`` (one copy) that maps ``v`` to ``y``."""
        both = np.concatenate([colors, colors])
        top = int(colors.max()) + 1
        both[v] = top
        both[self.n + y] = top
        return self._dfs(_refine(self.adj, both))

    def _leaf(self, left, right) -> Perm | None:
        # pair cell members in ascending order
        ol = np.argsort(left, kind="stable")
        orr = np.argsort(right, kind="stable")
        p = np.empty(self.n, dtype=np.intp)
        p[ol] = orr
        if is_automorphism(self.frame, p):
            return tuple(int(x) for x in p)
        return None

    def _dfs(self, colors) -> Perm | None:
        n = self.n
        left, right = colors[:n], colors[n:]
        k = int(colors.max()) + 1
        hl = np.bincount(left, minlength=k)
        if not np.array_equal(hl, np.bincount(right, minlength=k)):
            return None
        guess = self._leaf(left, right)
        if guess is not None:
            return guess
        nonsingle = np.flatnonzero(hl[left] > 1)
        if len(nonsingle) == 0:
            return None
        v = int(nonsingle[0])
        top = k
        for y in np.flatnonzero(right == left[v]):
            c = colors.copy()
            c[v] = top
            c[n + int(y)] = top
            found = self._dfs(_refine(self.adj, c))
            if found is not None:
                return found
        return None


def _orbit_of(b: int, gens: np.ndarray) -> np.ndarray:
    """Boolean mask of the orbit of ``b`` under the rows of ``gens`` (shape ``(m, n)``)."""
    mask = np.zeros(gens.shape[1], dtype=bool)
    mask[b] = True
    frontier = np.array([b])
    while len(frontier) and len(gens):
        img = np.unique(gens[:, frontier])
        img = img[~mask[img]]
        mask[img] = True
        frontier = img
    return mask


def _search_group(frame: Frame, fixed: tuple[int, ...], enum_bound: int) -> PermGroup:
    n = frame.size
    fixed = tuple(dict.fromkeys(fixed))
    rest = [p for p in range(n) if p not in set(fixed)]
    base = list(fixed) + rest
    search = _PairSearch(frame)
    # colouring with base[:i] individualized, for every i
    prefix = [search.base_colors]
    for v in base[:-1]:
        c = prefix[-1].copy()
        c[v] = c.max() + 1
        prefix.append(_refine(search.single, c))
    strong: list[Perm] = []
    found_at: list[int] = []
    gens = np.zeros((0, n), dtype=np.intp)
    levels = []
    for i in range(n - 1, len(fixed) - 1, -1):
        b = base[i]
        cell = np.flatnonzero(prefix[i] == prefix[i][b])
        if len(cell) == 1:
            continue
        orbit = _orbit_of(b, gens)
        for x in cell:
            x = int(x)
            if orbit[x]:
                continue
            g = search.find(prefix[i], b, x)
            if g is not None:
                strong.append(g)
                found_at.append(i)
                gens = np.vstack([gens, np.array(g, dtype=np.intp)])
                orbit = _orbit_of(b, gens)
        if orbit.sum() > 1:
            levels.append((i, b))
    levels.reverse()
    # generators found at level j fix base[:j] pointwise
    transversals = [_orbit_transversal(b, [g for g, j in zip(strong, found_at) if j >= i], n)
                    for i, b in levels]
    order = math.prod(len(t) for t in transversals)
    elements = _elements_from_chain(n, transversals) if order <= enum_bound else None
    return PermGroup(
        degree=n,
        generators=tuple(strong),
        order=order,
        elements=elements,
        base=tuple(b for _, b in levels),
        transversals=tuple(transversals),
        frame=frame,
        fixed=fixed,
    )


def automorphism_group(frame: Frame, enum_bound: int = DEFAULT_ENUM_BOUND) -> PermGroup:
    """Full automorphism group; enumerated when its order is at most ``enum_bound``."""
    return _search_group(frame, (), enum_bound)


def stabilizer(frame: Frame, enum_bound: int = DEFAULT_ENUM_BOUND) -> PermGroup:
    """Automorphisms fixing the designated world."""
    group = _search_group(frame, (frame.designated,), enum_bound)
    cluster = accessible_cluster(frame)
    for g in group.generators:
        if {g[w] for w in cluster} != cluster:
            raise AssertionError("stabilizer element does not preserve the accessible cluster")
    return group


# -- Schreier-Sims -----------------------------------------------------------


def schreier_sims(generators, degree: int):
    """Deterministic Schreier-Sims.

    Base is the ascending list of points moved by some generator. Returns
    ``(base, transversals, strong_generators)`` with empty levels removed.
    """
    e = identity(degree)
    strong = [tuple(g) for g in generators if tuple(g) != e]
    base = sorted({p for g in strong for p in range(degree) if g[p] != p})

    def levels():
        out = []
        for i, b in enumerate(base):
            s_i = [g for g in strong if all(g[q] == q for q in base[:i])]
            out.append((b, _orbit_transversal(b, s_i, degree), s_i))
        return out

    def sift(g, lv, start):
        for b, trans, _ in lv[start:]:
            x = g[b]
            if x not in trans:
                return g
            g = compose(inverse(trans[x]), g)
        return g

    while True:
        lv = levels()
        residue = None
        for i in range(len(lv) - 1, -1, -1):
            b, trans, s_i = lv[i]
            for p in sorted(trans):
                t = trans[p]
                for s in s_i:
                    h = compose(inverse(trans[s[p]]), compose(s, t))
                    r = sift(h, lv, i + 1)
                    if r != e:
                        residue = r
                        break
                if residue:
                    break
            if residue:
                break
        if residue is None:
            break
        strong.append(residue)

    kept = [(b, t) for b, t, _ in lv if len(t) > 1]
    return tuple(b for b, _ in kept), tuple(t for _, t in kept), tuple(strong)


def _group_from_generators(generators, degree: int, enum_bound: int) -> PermGroup:
    base, transversals, _ = schreier_sims(generators, degree)
    order = math.prod(len(t) for t in transversals)
    elements = _elements_from_chain(degree, transversals) if order <= enum_bound else None
    gens = tuple(dict.fromkeys(g for g in generators if g != identity(degree)))
    return PermGroup(degree, gens, order, elements, base, transversals)


# -- orbits and restricted actions --------------------------------------------


@dataclass(frozen=True)
class OrbitPartition:
    blocks: tuple[frozenset[int], ...]
    block_of: dict[int, int] = field(compare=False)

    def sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]

    def sorted_blocks(self) -> list[list[int]]:
        return [sorted(b) for b in self.blocks]

    def __len__(self):
        return len(self.blocks)

    @classmethod
    def from_blocks(cls, blocks) -> "OrbitPartition":
        blocks = tuple(sorted((frozenset(b) for b in blocks if b), key=min))
        block_of = {w: i for i, b in enumerate(blocks) for w in b}
        if sum(len(b) for b in blocks) != len(block_of):
            raise SymmetryError("blocks overlap")
        return cls(blocks, block_of)


def orbit_partition(group: PermGroup, on) -> OrbitPartition:
    """Orbits of ``group`` on the invariant set ``on`` (union-find over generators)."""
    on = frozenset(on)
    if any(not 0 <= w < group.degree for w in on):
        raise SymmetryError("set contains points outside the group's degree")
    parent = {w: w for w in on}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for g in group.generators:
        for w in on:
            y = g[w]
            if y not in on:
                raise SymmetryError(f"group maps point {w} to {y}, outside the given set")
            a, b = find(w), find(y)
            if a != b:
                parent[max(a, b)] = min(a, b)
    blocks: dict[int, set[int]] = {}
    for w in on:
        blocks.setdefault(find(w), set()).add(w)
    return OrbitPartition.from_blocks(blocks.values())


def restrict(group: PermGroup, orbit, enum_bound: int = DEFAULT_ENUM_BOUND) -> PermGroup:
    """Image of ``group`` acting on ``orbit``, re-indexed to ``0..len(orbit)-1`` in ascending order."""
    pts = sorted(orbit)
    idx = {p: i for i, p in enumerate(pts)}
    gens = []
    for g in group.generators:
        try:
            gens.append(tuple(idx[g[p]] for p in pts))
        except KeyError:
            raise SymmetryError("set is not invariant under the group") from None
    return _group_from_generators(gens, len(pts), enum_bound)


def restricted_order(group: PermGroup, orbit) -> int:
    """Order of the action of ``group`` on the invariant set ``orbit``.

    A group found by search knows its frame, so the order is the index of the
    subgroup fixing ``orbit`` pointwise, found by one more search. Bare
    generator sets go through Schreier-Sims on the restricted generators.
    """
    orbit = frozenset(orbit)
    if group.frame is None:
        return restrict(group, orbit, enum_bound=0).order
    for g in group.generators:
        if any(g[p] not in orbit for p in orbit):
            raise SymmetryError("set is not invariant under the group")
    kernel = _search_group(group.frame, group.fixed + tuple(sorted(orbit)), 0)
    return group.order // kernel.order


@dataclass(frozen=True)
class ExtReport:
    orbit: int
    orbit_size: int
    restricted_order: int
    holds: bool
    reason: str = ""
    designated: bool = False

    def to_dict(self) -> dict:
        return {
            "orbit": self.orbit,
            "orbit_size": self.orbit_size,
            "restricted_order": self.restricted_order,
            "full_symmetric_order": math.factorial(self.orbit_size),
            "holds": self.holds,
            "reason": self.reason,
            "designated_orbit": self.designated,
        }


def check_ext(group: PermGroup, orbit, index: int = 0, designated: bool = False) -> ExtReport:
    """Finite extension property: the restricted action is the full symmetric group."""
    orbit = frozenset(orbit)
    n = len(orbit)
    order = restricted_order(group, orbit)
    full = math.factorial(n)
    holds = order == full
    reason = "restricted action is Sym(orbit)" if holds else f"restricted order {order} != {n}! = {full}"
    return ExtReport(index, n, order, holds, reason, designated)


def is_point_homogeneous(group: PermGroup, cluster, designated: int) -> bool:
    rest = frozenset(cluster) - {designated}
    return len(orbit_partition(group, rest).blocks) == 1


# -- one-shot analysis ------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryReport:
    """Stabilizer, cluster and orbit data for one frame.

    ``partition`` covers the accessible cluster without the designated world;
    the designated world is always its own orbit and is reported separately.
    """

    frame: Frame
    group: PermGroup
    cluster: frozenset[int]
    partition: OrbitPartition
    ext: tuple[ExtReport, ...]
    designated_ext: ExtReport | None
    point_homogeneous: bool

    def to_dict(self) -> dict:
        names = self.frame.worlds
        orbits = []
        for i, block in enumerate(self.partition.sorted_blocks()):
            orbits.append({
                "index": i,
                "worlds": [names[w] for w in block],
                "size": len(block),
                "ext": self.ext[i].to_dict(),
            })
        d = {
            "stabilizer_order": self.group.order,
            "stabilizer_generators": [
                {names[i]: names[g[i]] for i in range(len(g)) if g[i] != i}
                for g in self.group.generators
            ],
            "cluster": [names[w] for w in sorted(self.cluster)],
            "designated": names[self.frame.designated],
            "orbits": orbits,
            "orbit_sizes": self.partition.sizes(),
            "point_homogeneous": self.point_homogeneous,
            "ext_all": all(r.holds for r in self.ext),
        }
        if self.designated_ext is not None:
            d["designated_orbit"] = self.designated_ext.to_dict()
        return d


def analyze(frame: Frame, enum_bound: int = DEFAULT_ENUM_BOUND) -> SymmetryReport:
    group = stabilizer(frame, enum_bound)
    cluster = accessible_cluster(frame)
    w0 = frame.designated
    partition = orbit_partition(group, cluster - {w0})
    ext = tuple(check_ext(group, b, i) for i, b in enumerate(partition.blocks))
    d_ext = None
    if w0 in cluster:
        d_ext = check_ext(group, {w0}, -1, designated=True)
    homogeneous = len(partition.blocks) == 1
    return SymmetryReport(frame, group, cluster, partition, ext, d_ext, homogeneous)
