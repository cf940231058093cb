"""Exact probability measures on the finite valuation space.

A valuation assigns an outcome in ``{0,1}^k`` to every world; outcome bit
``l`` is the truth value of atom ``l``. Valuations are indexed world-major,
atom-minor, little-endian: bit ``k*w + l`` of the index is atom ``l`` at world
``w``. An :class:`ExactMeasure` holds one probability per index.

Permutations act on valuations by ``(pi . V)(w) = V(pi^-1(w))``, i.e. the
outcome at world ``u`` moves to world ``pi[u]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .frame import Frame
from .hierspec import HierarchicalSpec
from .symmetry import OrbitPartition, PermGroup

__all__ = [
    "MAX_EXACT_BITS",
    "MAX_EXACT_WORLDS",
    "AtomSet",
    "ErgodicComponent",
    "ErgodicDecomposition",
    "ExactMeasure",
    "MeasureError",
    "act",
    "check_invariance_exact",
    "ergodic_decompose",
    "exact_hier_measure",
    "index_image",
    "joint_marginal",
    "marginal",
    "pushforward",
    "symmetrize",
    "valuation_from_index",
    "valuation_index",
]

MAX_EXACT_WORLDS = 12
MAX_EXACT_BITS = 24
TOL = 1e-12


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class AtomSet:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names or len(set(names)) != len(names):
            raise MeasureError("atom names must be unique and non-empty")

    @classmethod
    def of_size(cls, k: int) -> "AtomSet":
        return cls(tuple(f"p{i}" for i in range(k)))

    @property
    def k(self) -> int:
        return len(self.names)


def check_exact_size(n_worlds: int, k: int, max_worlds: int = MAX_EXACT_WORLDS) -> None:
    if n_worlds > max_worlds:
        raise MeasureError(f"{n_worlds} worlds exceeds the exact-path cap of {max_worlds}")
    if n_worlds * k > MAX_EXACT_BITS:
        raise MeasureError(f"valuation space 2^{n_worlds * k} is too large for exact computation")


def valuation_index(outcomes, k: int) -> int:
    idx = 0
    for w, o in enumerate(outcomes):
        idx |= int(o) << (k * w)
    return idx


def valuation_from_index(idx: int, n_worlds: int, k: int) -> tuple[int, ...]:
    mask = (1 << k) - 1
    return tuple((idx >> (k * w)) & mask for w in range(n_worlds))


def act(perm, v) -> tuple[int, ...]:
    """Relocate a valuation: the outcome at world ``u`` moves to ``perm[u]``."""
    if len(perm) != len(v):
        raise MeasureError("permutation degree does not match the valuation")
    out = [0] * len(v)
    for u, o in enumerate(v):
        out[perm[u]] = o
    return tuple(out)


def _indices(n_worlds: int, k: int) -> np.ndarray:
    return np.arange(1 << (n_worlds * k), dtype=np.int64)


def _outcomes_at(idx: np.ndarray, w: int, k: int) -> np.ndarray:
    return (idx >> (k * w)) & ((1 << k) - 1)


def index_image(perm, n_worlds: int, k: int) -> np.ndarray:
    """``img[i]`` is the index of ``act(perm, valuation(i))``."""
    if len(perm) != n_worlds:
        raise MeasureError("permutation degree does not match the frame")
    idx = _indices(n_worlds, k)
    img = np.zeros_like(idx)
    for u in range(n_worlds):
        img |= _outcomes_at(idx, u, k) << (k * perm[u])
    return img


@dataclass(frozen=True, eq=False)
class ExactMeasure:
    frame: Frame
    atoms: AtomSet
    probs: np.ndarray

    def __post_init__(self):
        n, k = self.frame.size, self.atoms.k
        if n * k > MAX_EXACT_BITS:
            raise MeasureError(f"valuation space 2^{n * k} is too large for exact computation")
        p = np.array(self.probs, dtype=float)
        if p.shape != (1 << (n * k),):
            raise MeasureError(f"expected {1 << (n * k)} probabilities, got {p.shape}")
        if np.any(p < 0):
            raise MeasureError("negative probability")
        if abs(p.sum() - 1.0) > TOL:
            raise MeasureError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.atoms.k

    @property
    def n_worlds(self) -> int:
        return self.frame.size

    def __len__(self):
        return len(self.probs)

    def with_probs(self, probs) -> "ExactMeasure":
        return ExactMeasure(self.frame, self.atoms, probs)

    def prob(self, valuation) -> float:
        return float(self.probs[valuation_index(valuation, self.k)])

    @classmethod
    def uniform(cls, frame: Frame, atoms: AtomSet, max_worlds: int = MAX_EXACT_WORLDS):
        check_exact_size(frame.size, atoms.k, max_worlds)
        n = 1 << (frame.size * atoms.k)
        return cls(frame, atoms, np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, frame: Frame, atoms: AtomSet, valuation):
        check_exact_size(frame.size, atoms.k)
        p = np.zeros(1 << (frame.size * atoms.k))
        p[valuation_index(valuation, atoms.k)] = 1.0
        return cls(frame, atoms, p)

    @classmethod
    def from_csv(cls, path, frame: Frame, atoms: AtomSet, max_worlds: int = MAX_EXACT_WORLDS):
        """Read ``valuation_index,probability`` rows; missing indices get 0."""
        check_exact_size(frame.size, atoms.k, max_worlds)
        n = 1 << (frame.size * atoms.k)
        p = np.zeros(n)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["valuation_index", "probability"]:
                raise MeasureError(f"{path}:1: expected header 'valuation_index,probability'")
            seen = set()
            for lineno, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                try:
                    i, v = int(row[0]), float(row[1])
                except (ValueError, IndexError):
                    raise MeasureError(f"{path}:{lineno}: malformed row {row!r}") from None
                if not 0 <= i < n:
                    raise MeasureError(f"{path}:{lineno}: index {i} outside 0..{n - 1}")
                if i in seen:
                    raise MeasureError(f"{path}:{lineno}: duplicate index {i}")
                seen.add(i)
                p[i] = v
        return cls(frame, atoms, p)

    def to_csv(self, path, skip_zero: bool = True) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["valuation_index", "probability"])
            for i, v in enumerate(self.probs):
                if v or not skip_zero:
                    w.writerow([i, repr(float(v))])


def pushforward(p: ExactMeasure, perm) -> ExactMeasure:
    """Law of ``perm . V`` when ``V ~ p``."""
    img = index_image(perm, p.n_worlds, p.k)
    q = np.empty_like(p.probs)
    q[img] = p.probs
    return p.with_probs(q)


def symmetrize(p: ExactMeasure, group: PermGroup) -> ExactMeasure:
    """Average of the pushforwards over every group element."""
    if group.elements is None:
        raise MeasureError("symmetrize needs a fully enumerated group")
    if group.degree != p.n_worlds:
        raise MeasureError("group degree does not match the frame")
    acc = np.zeros_like(p.probs)
    for g in group.elements:
        img = index_image(g, p.n_worlds, p.k)
        acc[img] += p.probs
    return p.with_probs(acc / len(group.elements))


def check_invariance_exact(p: ExactMeasure, group: PermGroup, tol: float = TOL) -> tuple[bool, float]:
    """Invariance under the generators, which implies invariance under the group."""
    dev = 0.0
    for g in group.generators:
        img = index_image(g, p.n_worlds, p.k)
        dev = max(dev, float(np.max(np.abs(p.probs - p.probs[img]))))
    return dev <= tol, dev


@dataclass(frozen=True, eq=False)
class ErgodicComponent:
    weight: float
    support: np.ndarray

    def measure(self, template: ExactMeasure) -> ExactMeasure:
        q = np.zeros(len(template))
        q[self.support] = 1.0 / len(self.support)
        return template.with_probs(q)


@dataclass(frozen=True, eq=False)
class ErgodicDecomposition:
    """Invariant measure as a mixture of uniform laws on group orbits of valuations.

    The component index plays the role of the invariant latent variable; unions
    of supports are exactly the invariant events.
    """

    template: ExactMeasure
    components: tuple[ErgodicComponent, ...]

    def __len__(self):
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def reconstruct(self) -> ExactMeasure:
        q = np.zeros(len(self.template))
        for c in self.components:
            q[c.support] += c.weight / len(c.support)
        return self.template.with_probs(q)

    def component_of(self) -> np.ndarray:
        """Component label per valuation index (-1 outside the support)."""
        lab = np.full(len(self.template), -1, dtype=np.int64)
        for i, c in enumerate(self.components):
            lab[c.support] = i
        return lab

    def to_dict(self, max_support: int = 64) -> dict:
        n, k = self.template.n_worlds, self.template.k
        comps = []
        for i, c in enumerate(self.components):
            rep = int(c.support[0])
            d = {
                "index": i,
                "weight": c.weight,
                "orbit_size": int(len(c.support)),
                "representative": rep,
                "representative_outcomes": list(valuation_from_index(rep, n, k)),
            }
            if len(c.support) <= max_support:
                d["support"] = [int(x) for x in c.support]
            comps.append(d)
        return {"n_components": len(self.components), "components": comps}


def valuation_orbits(group: PermGroup, n_worlds: int, k: int) -> list[np.ndarray]:
    """Orbits of the group on all valuation indices, ordered by smallest member."""
    n = 1 << (n_worlds * k)
    idx = _indices(n_worlds, k)
    if not group.generators:
        return [np.array([i]) for i in range(n)]
    rows = np.concatenate([idx] * len(group.generators))
    cols = np.concatenate([index_image(g, n_worlds, k) for g in group.generators])
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=True, connection="weak")
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels)
    groups = np.split(order, np.cumsum(counts)[:-1])
    groups.sort(key=lambda a: a[0])
    return groups


def ergodic_decompose(p: ExactMeasure, group: PermGroup, tol: float = TOL) -> ErgodicDecomposition:
    ok, dev = check_invariance_exact(p, group, tol)
    if not ok:
        raise MeasureError(f"measure is not invariant (max deviation {dev:.3e})")
    comps = []
    for orbit in valuation_orbits(group, p.n_worlds, p.k):
        vals = p.probs[orbit]
        if not np.any(vals > 0):
            continue
        if vals.max() - vals.min() > tol:
            raise MeasureError(
                f"unequal mass within one orbit (spread {vals.max() - vals.min():.3e})"
            )
        comps.append(ErgodicComponent(float(vals.sum()), orbit))
    return ErgodicDecomposition(p, tuple(comps))


def exact_hier_measure(
    spec: HierarchicalSpec,
    partition: OrbitPartition,
    frame: Frame,
    max_worlds: int = MAX_EXACT_WORLDS,
) -> ExactMeasure:
    """Mixture over the finite joint prior of per-orbit i.i.d. product laws.

    Worlds outside every block (the designated world, and any world outside
    the accessible cluster) follow the designated-world law.
    """
    k = spec.k
    check_exact_size(frame.size, k, max_worlds)
    for o in range(len(partition)):
        if spec.coupling != "joint" and not spec.prior_for(o).finite:
            raise MeasureError(f"orbit {o}: exact path needs a point or mixture prior")
    idx = _indices(frame.size, k)
    designated = spec.designated.probs()
    total = np.zeros(len(idx))
    for weight, assign in spec.joint_atoms(len(partition)):
        if weight == 0:
            continue
        laws = {o: m.probs() for o, m in assign.items()}
        term = np.full(len(idx), float(weight))
        for w in range(frame.size):
            b = partition.block_of.get(w)
            law = designated if b is None else laws[b]
            term *= law[_outcomes_at(idx, w, k)]
        total += term
    return ExactMeasure(frame, AtomSet(spec.atoms), total)


def marginal(p: ExactMeasure, w: int) -> np.ndarray:
    """Outcome distribution at world ``w`` (length ``2^k``)."""
    if not 0 <= w < p.n_worlds:
        raise MeasureError(f"world index {w} out of range")
    idx = _indices(p.n_worlds, p.k)
    return np.bincount(_outcomes_at(idx, w, p.k), weights=p.probs, minlength=1 << p.k)


def joint_marginal(p: ExactMeasure, worlds) -> np.ndarray:
    """Joint outcome law of ``worlds``; the first listed world occupies the lowest bits."""
    k = p.k
    idx = _indices(p.n_worlds, k)
    joint = np.zeros_like(idx)
    for i, w in enumerate(worlds):
        if not 0 <= w < p.n_worlds:
            raise MeasureError(f"world index {w} out of range")
        joint |= _outcomes_at(idx, w, k) << (k * i)
    return np.bincount(joint, weights=p.probs, minlength=1 << (k * len(worlds)))
