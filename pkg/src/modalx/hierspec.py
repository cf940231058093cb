"""Per-orbit priors over directing measures, cross-orbit coupling, spec files.

Spec file format (``#`` comments, one statement per line)::

    atoms = p, q
    coupling = independent            # or: shared, joint
    designated = point(bernoulli(0.5, 0.5))
    orbit 0: prior = mixture(0.5: bernoulli(0.2, 0.2), 0.5: bernoulli(0.8, 0.8))
    orbit 1: prior = beta(1, 1; 2, 3) # one (a, b) pair per atom, or one pair for all
    orbit *: prior = dirichlet(1, 1, 1, 1)
    joint 0.5: 0 = bernoulli(0.2, 0.2), 1 = bernoulli(0.8, 0.8)

Directing measures are written ``bernoulli(theta_1, ..., theta_k)`` (independent
atoms) or ``full(p_0, ..., p_{2^k-1})`` (a law on outcomes; outcome bit ``l`` is
atom ``l``). Numbers may be decimals or fractions such as ``1/3``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "COUPLINGS",
    "DirectingMeasure",
    "HierarchicalSpec",
    "OrbitPrior",
    "SpecError",
    "load_spec",
    "parse_spec",
]

COUPLINGS = ("independent", "shared", "joint")
_TOL = 1e-12


class SpecError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        prefix = ""
        if source:
            prefix = f"{source}:"
        if line is not None:
            prefix += f"{line}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


def _num(tok: str) -> float:
    try:
        return float(Fraction(tok.strip()))
    except (ValueError, ZeroDivisionError):
        raise SpecError(f"not a number: {tok.strip()!r}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class DirectingMeasure:
    """A law on the outcome space ``{0,1}^k``.

    ``form`` is ``"bernoulli"`` (``params`` = one success probability per atom)
    or ``"full"`` (``params`` = probability of each of the ``2^k`` outcomes).
    """

    form: str
    params: tuple[float, ...]

    def __post_init__(self):
        params = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", params)
        if self.form == "bernoulli":
            if not params or any(not 0.0 <= t <= 1.0 for t in params):
                raise SpecError("bernoulli parameters must lie in [0, 1]")
        elif self.form == "full":
            n = len(params)
            if n < 2 or n & (n - 1):
                raise SpecError("full law needs 2^k entries")
            if any(p < 0 for p in params) or abs(sum(params) - 1.0) > _TOL:
                raise SpecError("full law must be non-negative and sum to 1")
        else:
            raise SpecError(f"unknown directing measure form {self.form!r}")

    @classmethod
    def bernoulli(cls, *theta) -> "DirectingMeasure":
        return cls("bernoulli", tuple(theta))

    @classmethod
    def full(cls, probs) -> "DirectingMeasure":
        return cls("full", tuple(probs))

    @property
    def k(self) -> int:
        if self.form == "bernoulli":
            return len(self.params)
        return len(self.params).bit_length() - 1

    def probs(self) -> np.ndarray:
        """Outcome probabilities, length ``2^k``."""
        if self.form == "full":
            return np.array(self.params)
        return bernoulli_outcome_probs(np.array(self.params)[None, :])[0]

    def atom_probs(self) -> np.ndarray:
        """Marginal truth probability of each atom."""
        if self.form == "bernoulli":
            return np.array(self.params)
        return full_atom_probs(np.array(self.params)[None, :])[0]

    def to_text(self) -> str:
        return f"{self.form}({', '.join(_fmt(x) for x in self.params)})"


def outcome_bits(k: int) -> np.ndarray:
    """``(2^k, k)`` table: row ``o`` holds the bits of outcome ``o``."""
    o = np.arange(1 << k)
    return (o[:, None] >> np.arange(k)[None, :]) & 1


def bernoulli_outcome_probs(theta: np.ndarray) -> np.ndarray:
    """Row-wise product-Bernoulli laws: ``(m, k)`` thetas to ``(m, 2^k)`` outcome probs."""
    theta = np.asarray(theta, dtype=float)
    bits = outcome_bits(theta.shape[1]).astype(bool)
    t = theta[:, None, :]
    return np.where(bits[None], t, 1.0 - t).prod(axis=2)


def full_atom_probs(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    k = lam.shape[1].bit_length() - 1
    return lam @ outcome_bits(k)


@dataclass(frozen=True)
class OrbitPrior:
    """Prior over the directing measure of one orbit.

    kinds: ``point`` (``measure``), ``mixture`` (``components``: weight/measure
    pairs), ``beta`` (``shapes``: one ``(a, b)`` per atom), ``dirichlet``
    (``alpha``: one concentration per outcome).
    """

    kind: str
    measure: DirectingMeasure | None = None
    components: tuple[tuple[float, DirectingMeasure], ...] = ()
    shapes: tuple[tuple[float, float], ...] = ()
    alpha: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "point":
            if self.measure is None:
                raise SpecError("point prior needs a directing measure")
        elif self.kind == "mixture":
            if not self.components:
                raise SpecError("mixture prior needs at least one component")
            ws = [w for w, _ in self.components]
            if any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > _TOL:
                raise SpecError("mixture weights must be non-negative and sum to 1")
            if len({m.k for _, m in self.components}) != 1:
                raise SpecError("mixture components disagree on the number of atoms")
        elif self.kind == "beta":
            if not self.shapes or any(a <= 0 or b <= 0 for a, b in self.shapes):
                raise SpecError("beta shape parameters must be strictly positive")
        elif self.kind == "dirichlet":
            n = len(self.alpha)
            if n != 1 and (n < 2 or n & (n - 1)):
                raise SpecError("dirichlet needs 2^k concentrations (or one value to broadcast)")
            if any(a <= 0 for a in self.alpha):
                raise SpecError("dirichlet concentrations must be strictly positive")
        else:
            raise SpecError(f"unknown prior kind {self.kind!r}")

    @property
    def finite(self) -> bool:
        return self.kind in ("point", "mixture")

    @property
    def k(self) -> int:
        if self.kind == "point":
            return self.measure.k
        if self.kind == "mixture":
            return self.components[0][1].k
        if self.kind == "beta":
            return len(self.shapes)
        return len(self.alpha).bit_length() - 1

    @property
    def latent_form(self) -> str:
        """Form of the drawn directing measures: ``bernoulli`` or ``full``."""
        if self.kind == "beta":
            return "bernoulli"
        if self.kind == "dirichlet":
            return "full"
        forms = {m.form for _, m in self.atoms()}
        return "bernoulli" if forms == {"bernoulli"} else "full"

    def atoms(self) -> list[tuple[float, DirectingMeasure]]:
        if self.kind == "point":
            return [(1.0, self.measure)]
        if self.kind == "mixture":
            return list(self.components)
        raise SpecError(f"{self.kind} prior is not finitely supported")

    def with_k(self, k: int) -> "OrbitPrior":
        """Broadcast a single beta pair or dirichlet value to ``k`` atoms."""
        if self.kind == "beta" and len(self.shapes) == 1 and k > 1:
            return OrbitPrior("beta", shapes=self.shapes * k)
        if self.kind == "dirichlet" and len(self.alpha) == 1:
            return OrbitPrior("dirichlet", alpha=self.alpha * (1 << k))
        return self

    def to_text(self) -> str:
        if self.kind == "point":
            return f"point({self.measure.to_text()})"
        if self.kind == "mixture":
            parts = ", ".join(f"{_fmt(w)}: {m.to_text()}" for w, m in self.components)
            return f"mixture({parts})"
        if self.kind == "beta":
            return "beta(" + "; ".join(f"{_fmt(a)}, {_fmt(b)}" for a, b in self.shapes) + ")"
        return "dirichlet(" + ", ".join(_fmt(a) for a in self.alpha) + ")"


@dataclass(frozen=True)
class HierarchicalSpec:
    atoms: tuple[str, ...]
    priors: dict = field(default_factory=dict)
    default_prior: OrbitPrior | None = None
    designated: DirectingMeasure | None = None
    coupling: str = "independent"
    joint: tuple = ()

    def __post_init__(self):
        atoms = tuple(self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms or len(set(atoms)) != len(atoms):
            raise SpecError("atom names must be unique and non-empty")
        if self.coupling not in COUPLINGS:
            raise SpecError(f"coupling must be one of {', '.join(COUPLINGS)}")
        k = len(atoms)
        priors = {int(o): p.with_k(k) for o, p in self.priors.items()}
        object.__setattr__(self, "priors", priors)
        if self.default_prior is not None:
            object.__setattr__(self, "default_prior", self.default_prior.with_k(k))
        if self.designated is None:
            object.__setattr__(self, "designated", DirectingMeasure.bernoulli(*[0.5] * k))
        for p in list(priors.values()) + [self.default_prior]:
            if p is not None and p.k != k:
                raise SpecError(f"prior {p.to_text()} does not match {k} atoms")
        if self.designated.k != k:
            raise SpecError("designated law does not match the number of atoms")
        if self.coupling == "joint":
            if not self.joint:
                raise SpecError("joint coupling needs at least one 'joint' line")
            ws = [w for w, _ in self.joint]
            if any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > _TOL:
                raise SpecError("joint weights must be non-negative and sum to 1")
            for _, assign in self.joint:
                if any(m.k != k for m in assign.values()):
                    raise SpecError("joint atom does not match the number of atoms")

    @property
    def k(self) -> int:
        return len(self.atoms)

    def prior_for(self, orbit: int) -> OrbitPrior:
        p = self.priors.get(orbit, self.default_prior)
        if p is None:
            raise SpecError(f"no prior for orbit {orbit}")
        return p

    def validate(self, n_orbits: int) -> None:
        """Check these priors against a partition with ``n_orbits`` blocks."""
        extra = [o for o in self.priors if not 0 <= o < n_orbits]
        if extra:
            raise SpecError(f"prior given for unknown orbit(s) {extra}; partition has {n_orbits}")
        if self.coupling == "joint":
            for _, assign in self.joint:
                missing = set(range(n_orbits)) - set(assign)
                unknown = set(assign) - set(range(n_orbits))
                if missing or unknown:
                    raise SpecError(
                        f"joint atom must assign every orbit 0..{n_orbits - 1} exactly"
                    )
            return
        priors = [self.prior_for(o) for o in range(n_orbits)]
        if self.coupling == "shared" and len(set(priors)) > 1:
            raise SpecError("shared coupling requires the same prior on every orbit")

    def latent_form(self, orbit: int) -> str:
        if self.coupling == "joint":
            forms = {assign[orbit].form for _, assign in self.joint}
            return "bernoulli" if forms == {"bernoulli"} else "full"
        return self.prior_for(orbit).latent_form

    def joint_atoms(self, n_orbits: int) -> list[tuple[float, dict[int, DirectingMeasure]]]:
        """Finite joint law of the per-orbit directing measures."""
        self.validate(n_orbits)
        if self.coupling == "joint":
            return [(w, dict(a)) for w, a in self.joint]
        if self.coupling == "shared":
            if n_orbits == 0:
                return [(1.0, {})]
            return [(w, {o: m for o in range(n_orbits)}) for w, m in self.prior_for(0).atoms()]
        out = [(1.0, {})]
        for o in range(n_orbits):
            out = [(w * v, {**a, o: m}) for w, a in out for v, m in self.prior_for(o).atoms()]
        return out

    def to_text(self) -> str:
        lines = [f"atoms = {', '.join(self.atoms)}", f"coupling = {self.coupling}",
                 f"designated = point({self.designated.to_text()})"]
        for o in sorted(self.priors):
            lines.append(f"orbit {o}: prior = {self.priors[o].to_text()}")
        if self.default_prior is not None:
            lines.append(f"orbit *: prior = {self.default_prior.to_text()}")
        for w, assign in self.joint:
            body = ", ".join(f"{o} = {assign[o].to_text()}" for o in sorted(assign))
            lines.append(f"joint {_fmt(w)}: {body}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# -- parsing -------------------------------------------------------------------


def _split_top(s: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise SpecError("unbalanced parentheses")
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise SpecError("unbalanced parentheses")
    out.append("".join(cur))
    return [x.strip() for x in out]


def _call(s: str) -> tuple[str, str]:
    s = s.strip()
    i = s.find("(")
    if i <= 0 or not s.endswith(")"):
        raise SpecError(f"expected name(...), got {s!r}")
    return s[:i].strip(), s[i + 1:-1]


def parse_measure(s: str) -> DirectingMeasure:
    name, inner = _call(s)
    vals = [_num(x) for x in _split_top(inner, ",")]
    if name == "bernoulli":
        return DirectingMeasure.bernoulli(*vals)
    if name == "full":
        return DirectingMeasure.full(vals)
    raise SpecError(f"unknown directing measure {name!r}")


def parse_prior(s: str) -> OrbitPrior:
    name, inner = _call(s)
    if name == "point":
        return OrbitPrior("point", measure=parse_measure(inner))
    if name == "mixture":
        comps = []
        for part in _split_top(inner, ","):
            w, sep, m = part.partition(":")
            if not sep:
                raise SpecError(f"mixture component needs 'weight: measure', got {part!r}")
            comps.append((_num(w), parse_measure(m)))
        return OrbitPrior("mixture", components=tuple(comps))
    if name == "beta":
        shapes = []
        for group in _split_top(inner, ";"):
            ab = [_num(x) for x in _split_top(group, ",")]
            if len(ab) != 2:
                raise SpecError("beta takes 'a, b' pairs separated by ';'")
            shapes.append(tuple(ab))
        return OrbitPrior("beta", shapes=tuple(shapes))
    if name == "dirichlet":
        return OrbitPrior("dirichlet", alpha=tuple(_num(x) for x in _split_top(inner, ",")))
    if name in ("bernoulli", "full"):
        return OrbitPrior("point", measure=parse_measure(s))
    raise SpecError(f"unknown prior kind {name!r}")


def parse_spec(text: str, source: str | None = None) -> HierarchicalSpec:
    fields: dict = {"priors": {}, "joint": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("orbit "):
                head, sep, rest = line[6:].partition(":")
                key, eq, value = rest.partition("=")
                if not sep or not eq or key.strip() != "prior":
                    raise SpecError("expected 'orbit <index>: prior = <prior>'")
                idx = head.strip()
                prior = parse_prior(value)
                if idx == "*":
                    if "default_prior" in fields:
                        raise SpecError("duplicate 'orbit *' line")
                    fields["default_prior"] = prior
                else:
                    if not idx.isdigit():
                        raise SpecError(f"orbit index must be a non-negative integer, got {idx!r}")
                    if int(idx) in fields["priors"]:
                        raise SpecError(f"duplicate prior for orbit {idx}")
                    fields["priors"][int(idx)] = prior
            elif line.startswith("joint "):
                w, sep, rest = line[6:].partition(":")
                if not sep:
                    raise SpecError("expected 'joint <weight>: <orbit> = <measure>, ...'")
                assign = {}
                for part in _split_top(rest, ","):
                    o, eq, m = part.partition("=")
                    if not eq or not o.strip().isdigit():
                        raise SpecError(f"expected '<orbit> = <measure>', got {part!r}")
                    if int(o) in assign:
                        raise SpecError(f"orbit {o.strip()} assigned twice")
                    assign[int(o)] = parse_measure(m)
                fields["joint"].append((_num(w), assign))
            else:
                key, eq, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not eq:
                    raise SpecError(f"cannot parse line {line!r}")
                if key in fields:
                    raise SpecError(f"duplicate key {key!r}")
                if key == "atoms":
                    fields["atoms"] = tuple(a.strip() for a in value.split(","))
                elif key == "coupling":
                    if value not in COUPLINGS:
                        raise SpecError(f"coupling must be one of {', '.join(COUPLINGS)}")
                    fields["coupling"] = value
                elif key == "designated":
                    prior = parse_prior(value)
                    if prior.kind != "point":
                        raise SpecError("designated law must be a point(...) measure")
                    fields["designated"] = prior.measure
                else:
                    raise SpecError(f"unknown key {key!r}")
        except SpecError as exc:
            if exc.line is None:
                raise SpecError(str(exc), lineno, source) from None
            raise
    if "atoms" not in fields:
        raise SpecError("missing 'atoms = ...' line", None, source)
    fields["joint"] = tuple(fields["joint"])
    try:
        return HierarchicalSpec(**fields)
    except SpecError as exc:
        raise SpecError(str(exc), None, source) from None


def load_spec(path) -> HierarchicalSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read(), source=str(path))
