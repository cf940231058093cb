"""Finite Kripke frames: representation, text format, frame-class checks.

A frame is a finite world list, a boolean accessibility matrix and a
designated world. World order as written in a frame file is the canonical
order used everywhere else (matrices, valuation indexing, reports).

Frame text format (UTF-8, one directive per line, ``#`` starts a comment)::

    frame example2
    world w0
    world a1
    world a2
    designated w0
    edge w0 *          # w0 accesses every world
    biedge a1 a2
    close reflexive
    close transitive
    end
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Frame",
    "FrameClass",
    "FrameError",
    "FrameParseError",
    "accessible_cluster",
    "classify",
    "load_frame",
    "parse_frame",
    "serialize_frame",
    "transitive_closure",
]

_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")


class FrameError(ValueError):
    """Invalid frame data."""


class FrameParseError(FrameError):
    """Frame text that does not follow the grammar."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


@dataclass(frozen=True, eq=False)
class Frame:
    worlds: tuple[str, ...]
    relation: np.ndarray
    designated: int
    name: str = "frame"

    def __post_init__(self):
        worlds = tuple(self.worlds)
        object.__setattr__(self, "worlds", worlds)
        rel = np.array(self.relation, dtype=bool, copy=True)
        n = len(worlds)
        if n == 0:
            raise FrameError("a frame needs at least one world")
        if len(set(worlds)) != n:
            raise FrameError("world identifiers must be unique")
        if rel.shape != (n, n):
            raise FrameError(f"relation must be {n}x{n}, got {rel.shape}")
        if not 0 <= self.designated < n:
            raise FrameError(f"designated index {self.designated} out of range")
        rel.setflags(write=False)
        object.__setattr__(self, "relation", rel)

    @property
    def size(self) -> int:
        return len(self.worlds)

    def index(self, world: str) -> int:
        try:
            return self.worlds.index(world)
        except ValueError:
            raise FrameError(f"unknown world {world!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.worlds == other.worlds
            and self.designated == other.designated
            and self.name == other.name
            and np.array_equal(self.relation, other.relation)
        )

    def __hash__(self):
        return hash((self.worlds, self.designated, self.name, self.relation.tobytes()))

    def fingerprint(self) -> str:
        return hashlib.sha256(serialize_frame(self).encode()).hexdigest()


@dataclass(frozen=True)
class FrameClass:
    reflexive: bool
    transitive: bool
    symmetric: bool
    label: str = field(init=False)

    def __post_init__(self):
        if self.reflexive and self.transitive:
            label = "S5" if self.symmetric else "S4-not-S5"
        else:
            label = "not-S4"
        object.__setattr__(self, "label", label)

    @property
    def is_s4(self) -> bool:
        return self.reflexive and self.transitive

    @property
    def is_s5(self) -> bool:
        return self.label == "S5"


def transitive_closure(rel: np.ndarray) -> np.ndarray:
    """Warshall closure of a boolean matrix."""
    out = np.array(rel, dtype=bool, copy=True)
    for k in range(out.shape[0]):
        out |= np.outer(out[:, k], out[k, :])
    return out


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_frame(text: str, source: str | None = None) -> Frame:
    """Parse frame text into a :class:`Frame`.

    Edges may name worlds declared later in the file; they are resolved once
    the whole document has been read. ``close`` directives are applied after
    all edges, so their position in the file does not matter.
    """
    name = None
    worlds: list[str] = []
    seen: dict[str, int] = {}
    designated: tuple[str, int] | None = None
    edges: list[tuple[str, str, int]] = []
    close_refl = close_trans = False
    ended = False

    def fail(msg, lineno):
        raise FrameParseError(msg, lineno, source)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if ended:
            fail("content after 'end'", lineno)
        parts = line.split()
        head, args = parts[0], parts[1:]
        if head == "frame":
            if len(args) != 1:
                fail("expected 'frame <name>'", lineno)
            if name is not None:
                fail("duplicate 'frame' line", lineno)
            name = args[0]
        elif head == "world":
            if len(args) != 1 or not _ID_RE.match(args[0]):
                fail("expected 'world <id>' with id in [A-Za-z0-9_]+", lineno)
            if args[0] in seen:
                fail(f"duplicate world {args[0]!r} (first declared on line {seen[args[0]]})", lineno)
            seen[args[0]] = lineno
            worlds.append(args[0])
        elif head == "designated":
            if len(args) != 1:
                fail("expected 'designated <id>'", lineno)
            if designated is not None:
                fail("duplicate 'designated' line", lineno)
            designated = (args[0], lineno)
        elif head in ("edge", "biedge"):
            if len(args) != 2:
                fail(f"expected '{head} <a> <b>'", lineno)
            a, b = args
            edges.append((a, b, lineno))
            if head == "biedge":
                edges.append((b, a, lineno))
        elif head == "close":
            if args == ["reflexive"]:
                close_refl = True
            elif args == ["transitive"]:
                close_trans = True
            else:
                fail("expected 'close reflexive' or 'close transitive'", lineno)
        elif head == "end":
            if args:
                fail("'end' takes no arguments", lineno)
            ended = True
        else:
            fail(f"unknown directive {head!r}", lineno)

    if not worlds:
        raise FrameParseError("no worlds declared", None, source)
    if designated is None:
        raise FrameParseError("missing 'designated' line", None, source)

    index = {w: i for i, w in enumerate(worlds)}
    n = len(worlds)
    rel = np.zeros((n, n), dtype=bool)

    def resolve(tok, lineno):
        if tok == "*":
            return slice(None)
        if tok not in index:
            fail(f"unknown world {tok!r}", lineno)
        return index[tok]

    for a, b, lineno in edges:
        rel[resolve(a, lineno), resolve(b, lineno)] = True
    if close_refl:
        np.fill_diagonal(rel, True)
    if close_trans:
        rel = transitive_closure(rel)

    d_tok, d_line = designated
    if d_tok not in index:
        fail(f"unknown designated world {d_tok!r}", d_line)
    return Frame(tuple(worlds), rel, index[d_tok], name or "frame")


def load_frame(path) -> Frame:
    with open(path, encoding="utf-8") as fh:
        return parse_frame(fh.read(), source=str(path))


def serialize_frame(frame: Frame) -> str:
    """Canonical text form: every true matrix entry as one ``edge`` line."""
    lines = [f"frame {frame.name}"]
    lines += [f"world {w}" for w in frame.worlds]
    lines.append(f"designated {frame.worlds[frame.designated]}")
    for i, j in zip(*np.nonzero(frame.relation)):
        lines.append(f"edge {frame.worlds[i]} {frame.worlds[j]}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def classify(frame: Frame) -> FrameClass:
    r = frame.relation
    reflexive = bool(np.all(np.diag(r)))
    symmetric = bool(np.array_equal(r, r.T))
    # R∘R ⊆ R
    r2 = (r.astype(np.int64) @ r.astype(np.int64)) > 0
    transitive = bool(np.all(~r2 | r))
    return FrameClass(reflexive, transitive, symmetric)


def accessible_cluster(frame: Frame, w: int | None = None) -> frozenset[int]:
    """Worlds accessible from ``w`` (default: the designated world)."""
    if w is None:
        w = frame.designated
    if not 0 <= w < frame.size:
        raise FrameError(f"world index {w} out of range")
    return frozenset(int(v) for v in np.flatnonzero(frame.relation[w]))
