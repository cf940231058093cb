"""Statistical checks of orbit-wise symmetry on sampled data, plus estimation.

All tests are diagnostics with a stated null; verdicts carry the seed used for
any Monte Carlo p-value so a report can be replayed. Chi-square tests fall back
to Monte Carlo p-values (tables resampled with fixed margins) when an expected
count drops below 5.

Tests that compare laws of *different coordinates of the same replicate*
(exchangeability, invariance) assign each replicate to exactly one compared
coordinate tuple (round-robin on the replicate index), so the rows of the
contingency table are independent samples.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np
from scipy import stats
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .sampler import Dataset
from .symmetry import OrbitPartition, inverse

__all__ = [
    "DirectingEstimate",
    "Mode",
    "PosteriorState",
    "TestReport",
    "VerifyError",
    "chi2_homogeneity",
    "cross_orbit_report",
    "estimate_directing",
    "find_modes",
    "posterior_update",
    "test_exchangeability",
    "test_invariance_mc",
    "test_principal_principle",
    "test_rigidity",
]

MC_RESAMPLES = 10_000


class VerifyError(ValueError):
    pass


@dataclass
class TestReport:
    name: str
    statistic: float
    null: str
    threshold: float
    verdict: bool
    n: int
    seed: int | None
    p_value: float | None = None
    deviation: float | None = None
    note: str = ""
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "test": self.name,
            "statistic": _clean(self.statistic),
            "null": self.null,
            "p_value": _clean(self.p_value),
            "deviation": _clean(self.deviation),
            "threshold": _clean(self.threshold),
            "verdict": "pass" if self.verdict else "fail",
            "n": self.n,
            "seed": self.seed,
            "note": self.note,
            "details": _clean(self.details),
        }


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else x
    return x


def _rng(data: Dataset, tag: str) -> np.random.Generator:
    return np.random.default_rng([data.seed or 0, zlib.crc32(tag.encode())])


def _check_nonempty(data: Dataset):
    if data.n == 0:
        raise VerifyError("empty dataset")


def chi2_homogeneity(table, rng: np.random.Generator | None = None,
                     resamples: int = MC_RESAMPLES) -> tuple[float, float, str]:
    """Pearson chi-square test that all rows share one distribution.

    Returns ``(statistic, p_value, method)``.
    """
    t = np.asarray(table, dtype=np.int64)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    if t.shape[0] < 2 or t.shape[1] < 2:
        return 0.0, 1.0, "degenerate"
    row, col = t.sum(axis=1), t.sum(axis=0)
    total = row.sum()
    expected = np.outer(row, col) / total
    stat = float(((t - expected) ** 2 / expected).sum())
    if expected.min() >= 5:
        df = (t.shape[0] - 1) * (t.shape[1] - 1)
        return stat, float(stats.chi2.sf(stat, df)), "asymptotic"
    rng = rng if rng is not None else np.random.default_rng(0)
    sims = stats.random_table(row, col, seed=rng).rvs(resamples)
    sim_stat = ((sims - expected) ** 2 / expected).sum(axis=(1, 2))
    hits = int(np.sum(sim_stat >= stat * (1 - 1e-12)))
    return stat, (hits + 1) / (resamples + 1), "monte-carlo"


def _outcome_counts(data: Dataset, worlds) -> np.ndarray:
    m = 1 << data.k
    return np.stack([np.bincount(data.outcomes[:, w], minlength=m) for w in worlds])


def _tuple_codes(data: Dataset, worlds, rows=None) -> np.ndarray:
    out = data.outcomes if rows is None else data.outcomes[rows]
    code = np.zeros(len(out), dtype=np.int64)
    for i, w in enumerate(worlds):
        code |= out[:, w] << (data.k * i)
    return code


def test_rigidity(data: Dataset, partition: OrbitPartition, alpha: float = 0.01,
                  resamples: int = MC_RESAMPLES, bonferroni: bool = True) -> TestReport:
    """Chi-square homogeneity of per-world outcome frequencies within each orbit.

    Passes iff the smallest p-value is at least ``alpha / (orbits tested)``
    (plain ``alpha`` with ``bonferroni=False``).
    """
    _check_nonempty(data)
    rng = _rng(data, "rigidity")
    per_orbit = []
    for i, block in enumerate(partition.sorted_blocks()):
        if len(block) < 2:
            continue
        stat, p, method = chi2_homogeneity(_outcome_counts(data, block), rng, resamples)
        per_orbit.append({"orbit": i, "size": len(block), "statistic": stat, "p_value": p,
                          "method": method})
    null = "per-world outcome laws equal within each orbit"
    if not per_orbit:
        return TestReport("rigidity", 0.0, null, alpha, True, data.n, data.seed, p_value=1.0,
                          note="vacuous: no orbit has two or more worlds")
    thr = alpha / len(per_orbit) if bonferroni else alpha
    worst = min(per_orbit, key=lambda d: d["p_value"])
    return TestReport("rigidity", worst["statistic"], null, thr, worst["p_value"] >= thr,
                      data.n, data.seed, p_value=worst["p_value"],
                      note=f"Bonferroni over {len(per_orbit)} orbit(s)" if bonferroni else "uncorrected",
                      details={"orbits": per_orbit})


def _sample_subsets(orbit, m, max_subsets, rng):
    total = math.comb(len(orbit), m)
    if total <= max_subsets:
        return [list(c) for c in combinations(orbit, m)]
    chosen = set()
    while len(chosen) < max_subsets:
        chosen.add(tuple(sorted(rng.choice(orbit, size=m, replace=False).tolist())))
    return [list(c) for c in sorted(chosen)]


def test_exchangeability(data: Dataset, orbit, m: int = 2, alpha: float = 0.01,
                         max_subsets: int = 10, resamples: int = MC_RESAMPLES) -> TestReport:
    """Joint law of ordered ``m``-tuples of distinct orbit worlds is the same for every tuple.

    Tuples are all orderings of up to ``max_subsets`` ``m``-subsets (all subsets
    when there are few enough, else a seeded sample). Replicate ``r`` contributes
    to tuple ``r mod T`` only.
    """
    _check_nonempty(data)
    orbit = sorted(orbit)
    if not 1 <= m <= 3:
        raise VerifyError("tuple size must be 1, 2 or 3")
    if len(orbit) < m:
        raise VerifyError(f"orbit of size {len(orbit)} is smaller than m={m}")
    if m == 1:
        rep = test_rigidity(data, OrbitPartition.from_blocks([orbit]), alpha, resamples)
        rep.name = "exchangeability"
        rep.details["m"] = 1
        return rep
    rng = _rng(data, "exchangeability")
    subsets = _sample_subsets(orbit, m, max_subsets, rng)
    tuples = [list(p) for s in subsets for p in permutations(s)]
    T = len(tuples)
    ncell = 1 << (data.k * m)
    table = np.zeros((T, ncell), dtype=np.int64)
    for t, tup in enumerate(tuples):
        rows = np.arange(t, data.n, T)
        table[t] = np.bincount(_tuple_codes(data, tup, rows), minlength=ncell)
    stat, p, method = chi2_homogeneity(table, rng, resamples)
    return TestReport(
        "exchangeability", stat, f"joint law of ordered {m}-tuples is tuple-independent",
        alpha, p >= alpha, data.n, data.seed, p_value=p,
        details={"m": m, "orbit": orbit, "subsets": subsets, "tuples": T, "method": method},
    )


def test_invariance_mc(data: Dataset, generators, projection, alpha: float = 0.01,
                       resamples: int = MC_RESAMPLES, bonferroni: bool = True) -> TestReport:
    """Two-sample chi-square: law of ``V`` at ``projection`` versus law of ``pi . V`` there.

    ``(pi . V)(w) = V(pi^-1(w))``. Even replicates give the first sample, odd the
    second. Bonferroni over generators that actually move the projection.
    """
    _check_nonempty(data)
    projection = list(projection)
    if not 1 <= len(projection) <= 3:
        raise VerifyError("projection must name 1 to 3 worlds")
    nw = data.outcomes.shape[1]
    if any(not 0 <= w < nw for w in projection):
        raise VerifyError("projection world out of range")
    rng = _rng(data, "invariance")
    ncell = 1 << (data.k * len(projection))
    even, odd = np.arange(0, data.n, 2), np.arange(1, data.n, 2)
    per_gen = []
    for gi, g in enumerate(generators):
        if len(g) != nw:
            raise VerifyError("generator degree does not match the dataset")
        inv = inverse(tuple(g))
        moved = [inv[w] for w in projection]
        if moved == projection:
            continue
        table = np.stack([
            np.bincount(_tuple_codes(data, projection, even), minlength=ncell),
            np.bincount(_tuple_codes(data, moved, odd), minlength=ncell),
        ])
        stat, p, method = chi2_homogeneity(table, rng, resamples)
        per_gen.append({"generator": gi, "relocated": moved, "statistic": stat, "p_value": p,
                        "method": method})
    null = "projection law invariant under each generator"
    if not per_gen:
        return TestReport("invariance", 0.0, null, alpha, True, data.n, data.seed, p_value=1.0,
                          note="vacuous: no generator moves the projection",
                          details={"projection": projection})
    thr = alpha / len(per_gen) if bonferroni else alpha
    worst = min(per_gen, key=lambda d: d["p_value"])
    return TestReport("invariance", worst["statistic"], null, thr, worst["p_value"] >= thr,
                      data.n, data.seed, p_value=worst["p_value"],
                      note=f"Bonferroni over {len(per_gen)} generator(s)" if bonferroni else "uncorrected",
                      details={"projection": projection, "generators": per_gen})


@dataclass(frozen=True)
class Mode:
    location: float
    mass: float
    mean: float


def find_modes(values, bins: int = 100, sigma: float = 2.0, min_prominence: float = 0.05,
               lattice: int | None = None) -> tuple[list[Mode], np.ndarray, np.ndarray]:
    """Modes of a sample on [0, 1] from a Gaussian-smoothed histogram.

    Peaks need prominence of at least ``min_prominence`` times the highest
    smoothed bin. Each mode's mass is the sample fraction in its basin, the
    basins being split at the lowest point between neighbouring peaks.
    ``lattice`` (values are multiples of ``1/lattice``) switches to one bin
    per lattice point when that is coarser than ``bins``.
    """
    values = np.asarray(values, dtype=float)
    if lattice is not None and lattice + 1 < bins:
        edges = (np.arange(lattice + 2) - 0.5) / lattice
    else:
        edges = np.linspace(0.0, 1.0, bins + 1)
        edges[-1] += 1e-12
    counts, _ = np.histogram(values, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    smooth = gaussian_filter1d(counts.astype(float), sigma, mode="constant")
    padded = np.concatenate([[0.0], smooth, [0.0]])
    peaks, _ = find_peaks(padded, prominence=min_prominence * smooth.max())
    peaks = peaks - 1
    if len(peaks) == 0:
        return [], counts, edges
    cuts = [int(a + np.argmin(smooth[a:b + 1])) for a, b in zip(peaks[:-1], peaks[1:])]
    bounds = [edges[0] - 1] + [edges[c + 1] for c in cuts] + [edges[-1] + 1]
    modes = []
    for i, pk in enumerate(peaks):
        sel = (values >= bounds[i]) & (values < bounds[i + 1])
        modes.append(Mode(float(centers[pk]), float(sel.mean()),
                          float(values[sel].mean()) if sel.any() else float("nan")))
    return modes, counts, edges


@dataclass(frozen=True, eq=False)
class DirectingEstimate:
    """Per-replicate empirical outcome law over one orbit's worlds."""

    orbit: tuple[int, ...]
    outcome_freqs: np.ndarray
    atom_freqs: np.ndarray
    atom: int
    modes: tuple[Mode, ...]
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def summary(self) -> dict:
        return {
            "orbit": list(self.orbit),
            "atom": self.atom,
            "mean_atom_freq": _clean(self.atom_freqs.mean(axis=0)),
            "sd_atom_freq": _clean(self.atom_freqs.std(axis=0)),
            "modes": [{"location": m.location, "mass": m.mass, "mean": m.mean} for m in self.modes],
        }


def estimate_directing(data: Dataset, orbit, atom: int = 0, bins: int = 100,
                       sigma: float = 2.0) -> DirectingEstimate:
    orbit = tuple(sorted(orbit))
    if not orbit:
        raise VerifyError("orbit must contain at least one world")
    m = 1 << data.k
    sub = data.outcomes[:, list(orbit)]
    freqs = np.stack([(sub == o).mean(axis=1) for o in range(m)], axis=1)
    atom_freqs = np.stack([((sub >> a) & 1).mean(axis=1) for a in range(data.k)], axis=1)
    modes, counts, edges = find_modes(atom_freqs[:, atom], bins, sigma, lattice=len(orbit))
    return DirectingEstimate(orbit, freqs, atom_freqs, atom, tuple(modes), counts, edges)


def test_principal_principle(data: Dataset, partition: OrbitPartition, atom: int = 0,
                             bins: int = 10, tol: float = 0.02, min_obs: int = 10**6,
                             orbits=None) -> TestReport:
    """Calibration: given the recorded orbit chance of ``atom``, the observed frequency matches it.

    Replicates are binned by recorded chance (equal-width bins on [0, 1]); bins
    with fewer than ``min_obs`` world-level observations are skipped.
    """
    _check_nonempty(data)
    if not data.has_latents:
        raise VerifyError("dataset has no recorded latents")
    if not 0 <= atom < data.k:
        raise VerifyError(f"atom index {atom} out of range")
    blocks = partition.sorted_blocks()
    orbits = range(len(blocks)) if orbits is None else orbits
    rows, skipped, worst = [], 0, 0.0
    for o in orbits:
        block = blocks[o]
        theta = data.latent_atom_probs(o)[:, atom]
        hits = data.bits(block, atom).sum(axis=1)
        which = np.minimum((theta * bins).astype(int), bins - 1)
        for b in range(bins):
            sel = which == b
            obs = int(sel.sum()) * len(block)
            if obs == 0:
                continue
            if obs < min_obs:
                skipped += 1
                continue
            chance = float(theta[sel].mean())
            freq = float(hits[sel].sum() / obs)
            dev = abs(freq - chance)
            worst = max(worst, dev)
            rows.append({"orbit": o, "bin": b, "mean_chance": chance, "frequency": freq,
                         "deviation": dev, "observations": obs})
    note = f"{skipped} bin(s) skipped below {min_obs} observations" if skipped else ""
    if not rows:
        note = "vacuous: no bin reached the observation floor; " + note
    return TestReport("principal_principle", worst, "frequency given chance equals chance",
                      tol, worst <= tol, data.n, data.seed, deviation=worst, note=note,
                      details={"atom": atom, "bins": rows})


@dataclass
class PosteriorState:
    """Independent Beta(a, b) posteriors per orbit and atom."""

    a: dict
    b: dict

    def __post_init__(self):
        for o in self.a:
            self.a[o] = np.asarray(self.a[o], dtype=float).copy()
            self.b[o] = np.asarray(self.b[o], dtype=float).copy()
            if np.any(self.a[o] <= 0) or np.any(self.b[o] <= 0):
                raise VerifyError("Beta shapes must be positive")

    @classmethod
    def uniform(cls, n_orbits: int, k: int, a: float = 1.0, b: float = 1.0) -> "PosteriorState":
        return cls({o: np.full(k, a) for o in range(n_orbits)},
                   {o: np.full(k, b) for o in range(n_orbits)})

    def mean(self, orbit: int) -> np.ndarray:
        return self.a[orbit] / (self.a[orbit] + self.b[orbit])

    def copy(self) -> "PosteriorState":
        return PosteriorState(dict(self.a), dict(self.b))

    def __eq__(self, other):
        return (isinstance(other, PosteriorState) and self.a.keys() == other.a.keys()
                and all(np.array_equal(self.a[o], other.a[o]) and np.array_equal(self.b[o], other.b[o])
                        for o in self.a))

    def to_dict(self) -> dict:
        return {str(o): {"a": _clean(self.a[o]), "b": _clean(self.b[o]),
                         "mean": _clean(self.mean(o))} for o in sorted(self.a)}


def posterior_update(data: Dataset, partition: OrbitPartition, prior: PosteriorState,
                     observed=None) -> PosteriorState:
    """Conjugate Beta-Bernoulli update, orbit by orbit.

    Only worlds in ``observed`` (default: all) count. An orbit with no
    observations keeps its prior unchanged.
    """
    post = prior.copy()
    observed = None if observed is None else set(observed)
    for o, block in enumerate(partition.sorted_blocks()):
        worlds = block if observed is None else [w for w in block if w in observed]
        if not worlds or data.n == 0 or o not in post.a:
            continue
        for atom in range(data.k):
            s = float(data.bits(worlds, atom).sum())
            post.a[o][atom] += s
            post.b[o][atom] += data.n * len(worlds) - s
    return post


def cross_orbit_report(data: Dataset, orbit_a, orbit_b, atom: int = 0, expect: str | None = None,
                       tol: float = 0.02, min_r: float = 0.9) -> tuple[float, TestReport]:
    """Correlation of within-replicate frequencies across two orbits.

    ``expect=None`` is informational and always passes; ``"independent"``
    requires ``|r| <= tol``; ``"coupled"`` requires ``r >= min_r``. Different
    orbit marginals are reported, never failed.
    """
    _check_nonempty(data)
    orbit_a, orbit_b = sorted(orbit_a), sorted(orbit_b)
    if set(orbit_a) & set(orbit_b):
        raise VerifyError("orbits must be disjoint")
    fa = data.bits(orbit_a, atom).mean(axis=1)
    fb = data.bits(orbit_b, atom).mean(axis=1)
    if fa.std() == 0 or fb.std() == 0:
        r = float("nan")
    else:
        r = float(np.corrcoef(fa, fb)[0, 1])
    se = math.sqrt((fa.var() + fb.var()) / data.n) if data.n > 1 else float("inf")
    distinct = bool(abs(fa.mean() - fb.mean()) > 4 * se) if se > 0 else bool(fa.mean() != fb.mean())
    details = {
        "atom": atom,
        "orbit_a": {"worlds": orbit_a, "mean_freq": float(fa.mean()), "sd_freq": float(fa.std())},
        "orbit_b": {"worlds": orbit_b, "mean_freq": float(fb.mean()), "sd_freq": float(fb.std())},
        "distinct_marginals": distinct,
        "expect": expect,
    }
    note = "distinct orbit marginals (informational)" if distinct else ""
    if expect is None:
        verdict, thr = True, float("nan")
    elif expect == "independent":
        verdict, thr = (not math.isnan(r) and abs(r) <= tol), tol
    elif expect == "coupled":
        verdict, thr = (not math.isnan(r) and r >= min_r), min_r
    else:
        raise VerifyError("expect must be None, 'independent' or 'coupled'")
    if math.isnan(r):
        note = (note + "; " if note else "") + "correlation undefined (constant frequencies)"
    rep = TestReport("coupling", r, "Pearson correlation of orbit frequencies", thr, verdict,
                     data.n, data.seed, deviation=r, note=note, details=details)
    return r, rep
