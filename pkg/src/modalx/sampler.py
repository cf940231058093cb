"""Seeded sampling from orbit-wise mixtures of i.i.d. laws.

Each replicate draws one directing measure per orbit from its prior (jointly,
according to the coupling mode), then draws every world of the orbit
independently from that measure. The designated world, and any world outside
the accessible cluster, is drawn from the designated-world law.

Random streams: replicates are processed in fixed chunks of ``CHUNK``. Chunk
``c`` draws from Philox generators seeded by ``SeedSequence(seed,
spawn_key=(c, purpose, orbit))``, so output depends only on ``(spec,
partition, n, seed)`` and never on how chunks are scheduled across threads.
"""

from __future__ import annotations

import csv
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .frame import Frame
from .hierspec import HierarchicalSpec, OrbitPrior, full_atom_probs
from .measure import ExactMeasure
from .symmetry import OrbitPartition

__all__ = [
    "CHUNK",
    "Dataset",
    "DatasetError",
    "Streams",
    "draw_latents",
    "sample_from_measure",
    "sample_replicates",
    "sample_valuation",
    "thread_count",
]

CHUNK = 4096
_PURPOSE = {"latent": 0, "valuation": 1, "designated": 2, "joint": 3}


class DatasetError(ValueError):
    pass


def thread_count() -> int:
    """Worker cap from ``MODALX_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MODALX_THREADS", "1")))
    except ValueError:
        return 1


class Streams:
    """Independent generators for one chunk of replicates."""

    def __init__(self, seed: int, chunk: int = 0):
        self.seed = int(seed)
        self.chunk = int(chunk)

    def get(self, purpose: str, orbit: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.chunk, _PURPOSE[purpose], orbit))
        return np.random.Generator(np.random.Philox(ss))


def _prior_draw(prior: OrbitPrior, rng: np.random.Generator, size: int) -> np.ndarray:
    form = prior.latent_form

    def params(m):
        return np.array(m.params) if form == m.form else m.probs()

    if prior.kind == "point":
        return np.tile(params(prior.measure), (size, 1))
    if prior.kind == "mixture":
        table = np.stack([params(m) for _, m in prior.components])
        weights = np.array([w for w, _ in prior.components])
        pick = rng.choice(len(weights), size=size, p=weights / weights.sum())
        return table[pick]
    if prior.kind == "beta":
        # numpy's beta: Johnk's algorithm for a, b <= 1, gamma ratio otherwise
        # drawn row by row, so a shorter run is a prefix of a longer one
        a, b = np.array(prior.shapes).T
        return rng.beta(a, b, size=(size, len(a)))
    # gamma-ratio construction
    return rng.dirichlet(prior.alpha, size=size)


def draw_latents(spec: HierarchicalSpec, partition: OrbitPartition, streams: Streams,
                 size: int = 1) -> dict[int, np.ndarray]:
    """One directing-measure draw per orbit and replicate.

    Returns ``orbit -> (size, d)`` where ``d = k`` for Bernoulli-product
    latents (the per-atom thetas) and ``d = 2^k`` for full outcome laws.
    """
    n_orbits = len(partition)
    spec.validate(n_orbits)
    if n_orbits == 0:
        return {}
    if spec.coupling == "independent":
        return {o: _prior_draw(spec.prior_for(o), streams.get("latent", o), size)
                for o in range(n_orbits)}
    if spec.coupling == "shared":
        draw = _prior_draw(spec.prior_for(0), streams.get("latent", 0), size)
        return {o: draw for o in range(n_orbits)}
    weights = np.array([w for w, _ in spec.joint])
    pick = streams.get("joint").choice(len(weights), size=size, p=weights / weights.sum())
    out = {}
    for o in range(n_orbits):
        form = spec.latent_form(o)
        table = np.stack([
            np.array(a[o].params) if a[o].form == form else a[o].probs()
            for _, a in spec.joint
        ])
        out[o] = table[pick]
    return out


def _draw_outcomes(rng: np.random.Generator, form: str, params: np.ndarray, m: int) -> np.ndarray:
    """``(size, m)`` outcomes, i.i.d. across the ``m`` columns given each row's law."""
    size = params.shape[0]
    if form == "bernoulli":
        k = params.shape[1]
        bits = rng.random((size, m, k)) < params[:, None, :]
        return (bits.astype(np.int64) << np.arange(k)).sum(axis=2)
    cdf = np.cumsum(params, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((size, m))
    return (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)


def sample_valuation(latents: dict[int, np.ndarray], forms: dict[int, str],
                     partition: OrbitPartition, designated, n_worlds: int,
                     streams: Streams) -> np.ndarray:
    """Outcomes ``(size, n_worlds)`` given per-orbit latents."""
    if set(latents) != set(range(len(partition))):
        raise DatasetError("latents must cover every orbit")
    size = next(iter(latents.values())).shape[0] if latents else 1
    out = np.zeros((size, n_worlds), dtype=np.int64)
    for o, block in enumerate(partition.sorted_blocks()):
        out[:, block] = _draw_outcomes(streams.get("valuation", o), forms[o], latents[o], len(block))
    rest = [w for w in range(n_worlds) if w not in partition.block_of]
    if rest:
        law = np.tile(np.array(designated.params), (size, 1))
        out[:, rest] = _draw_outcomes(streams.get("designated"), designated.form, law, len(rest))
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sampled replicates: per-world outcomes plus the latents that produced them.

    ``outcomes[r, w]`` is the outcome (bit ``l`` = atom ``l``) at world ``w`` in
    replicate ``r``. ``latents[o]`` has one row per replicate; ``latent_forms[o]``
    says whether the row holds per-atom thetas or a full outcome law.
    """

    outcomes: np.ndarray
    world_names: tuple[str, ...]
    atom_names: tuple[str, ...]
    latents: dict = field(default_factory=dict)
    latent_forms: dict = field(default_factory=dict)
    seed: int | None = None
    fingerprint: str = ""

    def __post_init__(self):
        out = np.asarray(self.outcomes, dtype=np.int64)
        if out.ndim != 2 or out.shape[1] != len(self.world_names):
            raise DatasetError("outcomes must be (replicates, worlds)")
        if out.size and (out.min() < 0 or out.max() >= (1 << len(self.atom_names))):
            raise DatasetError("outcome out of range for the atom count")
        object.__setattr__(self, "outcomes", out)
        for o, lat in self.latents.items():
            if len(lat) != len(out):
                raise DatasetError(f"latents for orbit {o} do not match the replicate count")

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def k(self) -> int:
        return len(self.atom_names)

    @property
    def has_latents(self) -> bool:
        return bool(self.latents)

    def bits(self, worlds, atom: int) -> np.ndarray:
        """Truth of ``atom`` at ``worlds``: ``(n, len(worlds))`` of 0/1."""
        return (self.outcomes[:, list(worlds)] >> atom) & 1

    def latent_atom_probs(self, orbit: int) -> np.ndarray:
        """Per-replicate chance of each atom in ``orbit``: ``(n, k)``."""
        if orbit not in self.latents:
            raise DatasetError(f"no latents recorded for orbit {orbit}")
        lat = self.latents[orbit]
        return lat if self.latent_forms[orbit] == "bernoulli" else full_atom_probs(lat)

    def valuation_indices(self) -> np.ndarray:
        idx = np.zeros(self.n, dtype=np.int64)
        for w in range(self.outcomes.shape[1]):
            idx |= self.outcomes[:, w] << (self.k * w)
        return idx

    def select(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        if rows.size == 0:
            rows = rows.astype(np.int64)
        return Dataset(self.outcomes[rows], self.world_names, self.atom_names,
                       {o: v[rows] for o, v in self.latents.items()}, dict(self.latent_forms),
                       self.seed, self.fingerprint)

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        first = parts[0]
        keys = set(first.latents)
        if any(set(p.latents) != keys for p in parts):
            raise DatasetError("datasets record different latents")
        return Dataset(
            np.concatenate([p.outcomes for p in parts]), first.world_names, first.atom_names,
            {o: np.concatenate([p.latents[o] for p in parts]) for o in keys},
            dict(first.latent_forms), first.seed, first.fingerprint,
        )

    def _latent_columns(self) -> list[str]:
        cols = []
        for o in sorted(self.latents):
            d = self.latents[o].shape[1]
            if self.latent_forms[o] == "bernoulli":
                cols += [f"O{o}.theta.{a}" for a in self.atom_names]
            else:
                cols += [f"O{o}.lambda.{j}" for j in range(d)]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["replicate"] + self._latent_columns()
            header += [f"{wn}.{a}" for wn in self.world_names for a in self.atom_names]
            w.writerow(header)
            lat = [self.latents[o] for o in sorted(self.latents)]
            k = self.k
            for r in range(self.n):
                row = [r]
                for block in lat:
                    row += [repr(float(x)) for x in block[r]]
                row += [(int(o) >> a) & 1 for o in self.outcomes[r] for a in range(k)]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, frame: Frame) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "replicate":
                raise DatasetError(f"{path}:1: expected a 'replicate' column first")
            lat_cols, bit_cols = [], []
            for j, h in enumerate(header[1:], start=1):
                m = re.fullmatch(r"O(\d+)\.(theta|lambda)\.(\w+)", h)
                (lat_cols if m else bit_cols).append((j, h, m))
            atoms = []
            for _, h, _ in bit_cols:
                world, _, atom = h.partition(".")
                if world == frame.worlds[0] and atom not in atoms:
                    atoms.append(atom)
            expected = [f"{wn}.{a}" for wn in frame.worlds for a in atoms]
            if [h for _, h, _ in bit_cols] != expected:
                raise DatasetError(f"{path}:1: outcome columns do not match the frame's worlds")
            rows = [r for r in reader if r]
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        k = len(atoms)
        bits = data[:, [j for j, _, _ in bit_cols]].astype(np.int64).reshape(len(rows), frame.size, k)
        outcomes = (bits << np.arange(k)).sum(axis=2)
        latents, forms = {}, {}
        for j, _, m in lat_cols:
            o = int(m.group(1))
            forms[o] = "bernoulli" if m.group(2) == "theta" else "full"
            latents.setdefault(o, []).append(data[:, j])
        latents = {o: np.stack(cols, axis=1) for o, cols in latents.items()}
        return cls(outcomes, frame.worlds, tuple(atoms), latents, forms)


def _sample_chunk(spec, partition, forms, n_worlds, seed, chunk, size):
    streams = Streams(seed, chunk)
    latents = draw_latents(spec, partition, streams, size)
    outcomes = sample_valuation(latents, forms, partition, spec.designated, n_worlds, streams)
    return latents, outcomes


def sample_replicates(spec: HierarchicalSpec, partition: OrbitPartition, n: int, seed: int,
                      frame: Frame, threads: int | None = None) -> Dataset:
    """``n`` independent replicates; identical inputs give identical output."""
    if n < 1:
        raise DatasetError("need at least one replicate")
    n_orbits = len(partition)
    spec.validate(n_orbits)
    forms = {o: spec.latent_form(o) for o in range(n_orbits)}
    sizes = [min(CHUNK, n - c * CHUNK) for c in range((n + CHUNK - 1) // CHUNK)]
    jobs = [(spec, partition, forms, frame.size, seed, c, s) for c, s in enumerate(sizes)]
    threads = threads or thread_count()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _sample_chunk(*a), jobs))
    else:
        results = [_sample_chunk(*a) for a in jobs]
    outcomes = np.concatenate([r[1] for r in results])
    latents = {o: np.concatenate([r[0][o] for r in results]) for o in range(n_orbits)}
    return Dataset(outcomes, frame.worlds, spec.atoms, latents, forms, int(seed), spec.fingerprint())


def sample_from_measure(p: ExactMeasure, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. valuations drawn directly from an exact measure (no latents)."""
    if n < 1:
        raise DatasetError("need at least one replicate")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    idx = rng.choice(len(p.probs), size=n, p=p.probs)
    shifts = p.k * np.arange(p.n_worlds)
    outcomes = (idx[:, None] >> shifts[None, :]) & ((1 << p.k) - 1)
    return Dataset(outcomes, p.frame.worlds, p.atoms.names, seed=int(seed))
