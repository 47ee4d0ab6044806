"""Attributed graphs, planted patterns and the D1 / D0 / Dperp predicates.

Node features are one-hot colors, so a graph is stored as an integer color
vector plus a hollow symmetric 0/1 adjacency matrix.  Patterns always carry
pairwise distinct colors, which turns occurrence into a per-color lookup.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, ParseError

DEFAULT_WITNESS_CAP = 1000


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    colors: np.ndarray
    adjacency: np.ndarray
    label: int | None = None
    anchor: tuple[int, ...] | None = None

    def __post_init__(self):
        colors = np.array(self.colors, dtype=np.int64).reshape(-1)
        adj = np.array(self.adjacency, dtype=np.uint8)
        n = colors.shape[0]
        if n < 1:
            raise InvalidArgument("graph needs at least one node")
        if adj.shape != (n, n):
            raise InvalidArgument(f"adjacency shape {adj.shape} does not match {n} nodes")
        if np.any(colors < 0):
            raise InvalidArgument("color indices must be non-negative")
        if np.any(adj > 1):
            raise InvalidArgument("adjacency must be binary")
        if np.any(adj != adj.T):
            raise InvalidArgument("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise InvalidArgument("adjacency must have a zero diagonal")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidArgument(f"label must be 0, 1 or None, got {self.label!r}")
        anchor = self.anchor
        if anchor is not None:
            anchor = tuple(int(a) for a in anchor)
            if any(a < 0 or a >= n for a in anchor):
                raise InvalidArgument("anchor index out of range")
        object.__setattr__(self, "colors", _frozen(colors))
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "anchor", anchor)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_edges(cls, num_nodes, colors, edges, label=None, anchor=None) -> "Graph":
        adj = np.zeros((num_nodes, num_nodes), dtype=np.uint8)
        for i, j in edges:
            if i == j:
                raise InvalidArgument(f"self-loop on node {i}")
            adj[i, j] = adj[j, i] = 1
        return cls(np.asarray(colors), adj, label, anchor)

    @property
    def num_nodes(self) -> int:
        return int(self.colors.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def palette_size(self) -> int:
        return int(self.colors.max()) + 1

    def one_hot(self, num_colors: int) -> np.ndarray:
        if self.colors.max() >= num_colors:
            raise InvalidArgument(
                f"color {int(self.colors.max())} outside palette of size {num_colors}"
            )
        x = np.zeros((self.num_nodes, num_colors))
        x[np.arange(self.num_nodes), self.colors] = 1.0
        return x

    def replace(self, **changes) -> "Graph":
        fields = dict(colors=self.colors, adjacency=self.adjacency,
                      label=self.label, anchor=self.anchor)
        fields.update(changes)
        return Graph(**fields)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Node ``i`` of the result is node ``perm[i]`` of this graph."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.num_nodes)):
            raise InvalidArgument("perm must be a permutation of node indices")
        inverse = np.argsort(perm)
        anchor = None if self.anchor is None else tuple(int(inverse[a]) for a in self.anchor)
        return Graph(self.colors[perm], self.adjacency[np.ix_(perm, perm)], self.label, anchor)

    def same_as(self, other: "Graph") -> bool:
        return (
            np.array_equal(self.colors, other.colors)
            and np.array_equal(self.adjacency, other.adjacency)
            and self.label == other.label
            and self.anchor == other.anchor
        )

    def to_record(self) -> dict:
        return {
            "n": self.num_nodes,
            "colors": self.colors.tolist(),
            "edges": [list(e) for e in self.edges()],
            "label": self.label,
            "anchor": None if self.anchor is None else list(self.anchor),
        }

    @classmethod
    def from_record(cls, rec: dict, location=None) -> "Graph":
        try:
            n = int(rec["n"])
            colors = [int(c) for c in rec["colors"]]
            edges = [(int(i), int(j)) for i, j in rec.get("edges", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad graph record ({exc})", location) from None
        if len(colors) != n:
            raise ParseError(f"expected {n} colors, got {len(colors)}", location)
        if any(not (0 <= i < n and 0 <= j < n) for i, j in edges):
            raise ParseError("edge endpoint out of range", location)
        try:
            return cls.from_edges(n, colors, edges, rec.get("label"), rec.get("anchor"))
        except InvalidArgument as exc:
            raise ParseError(str(exc), location) from None


def dump_jsonl(graphs: Iterable[Graph], path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_record(), separators=(",", ":")))
            fh.write("\n")


def load_jsonl(path) -> list[Graph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            loc = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", loc) from None
            graphs.append(Graph.from_record(rec, loc))
    return graphs


class PatternKind(str, enum.Enum):
    CHAIN = "chain"
    STAR = "star"


@dataclass(frozen=True, eq=False)
class Pattern:
    """A connected pattern whose nodes carry pairwise distinct colors."""

    colors: tuple[int, ...]
    adjacency: np.ndarray
    kind: PatternKind = PatternKind.CHAIN

    def __post_init__(self):
        colors = tuple(int(c) for c in self.colors)
        adj = np.array(self.adjacency, dtype=np.uint8)
        m = len(colors)
        if m < 1:
            raise InvalidArgument("pattern needs at least one node")
        if len(set(colors)) != m:
            raise InvalidArgument("pattern colors must be pairwise distinct")
        if adj.shape != (m, m) or np.any(adj != adj.T) or np.any(np.diag(adj)) or np.any(adj > 1):
            raise InvalidArgument("pattern adjacency must be a hollow symmetric 0/1 matrix")
        if not _is_connected(adj):
            raise InvalidArgument("pattern must be connected")
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "kind", PatternKind(self.kind))

    @classmethod
    def chain(cls, colors: Sequence[int]) -> "Pattern":
        m = len(colors)
        adj = np.zeros((m, m), dtype=np.uint8)
        for i in range(m - 1):
            adj[i, i + 1] = adj[i + 1, i] = 1
        return cls(tuple(colors), adj, PatternKind.CHAIN)

    @classmethod
    def star(cls, center: int, leaves: Sequence[int]) -> "Pattern":
        m = len(leaves) + 1
        adj = np.zeros((m, m), dtype=np.uint8)
        adj[0, 1:] = adj[1:, 0] = 1
        return cls((center, *leaves), adj, PatternKind.STAR)

    @property
    def size(self) -> int:
        return len(self.colors)

    @property
    def center(self) -> int:
        """Index of the highest-degree pattern node (lowest index on ties)."""
        return int(np.argmax(self.adjacency.sum(axis=1)))

    @property
    def is_star(self) -> bool:
        """True when one node is adjacent to every other node."""
        deg = self.adjacency.sum(axis=1)
        return self.size == 1 or int(deg.max()) == self.size - 1

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    def as_graph(self) -> Graph:
        return Graph(np.array(self.colors), self.adjacency)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "colors": list(self.colors),
                "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_json(cls, obj: dict) -> "Pattern":
        colors = obj["colors"]
        m = len(colors)
        adj = np.zeros((m, m), dtype=np.uint8)
        for i, j in obj["edges"]:
            adj[i, j] = adj[j, i] = 1
        return cls(tuple(colors), adj, PatternKind(obj.get("kind", "chain")))


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


class Partition(str, enum.Enum):
    D1 = "d1"
    D0 = "d0"
    DPERP = "dperp"


def grid_graph(rows: int, cols: int, palette, seed: int) -> Graph:
    """4-neighbour lattice with colors drawn uniformly from ``palette``."""
    if rows < 1 or cols < 1:
        raise InvalidArgument("grid dimensions must be positive")
    palette = sorted(set(int(c) for c in palette))
    if not palette:
        raise InvalidArgument("palette must be nonempty")
    rng = np.random.default_rng(seed)
    colors = rng.choice(np.array(palette), size=rows * cols)
    return Graph(colors, grid_adjacency(rows, cols))


def grid_adjacency(rows: int, cols: int) -> np.ndarray:
    n = rows * cols
    adj = np.zeros((n, n), dtype=np.uint8)
    idx = np.arange(n).reshape(rows, cols)
    h = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    v = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    for a, b in (h, v):
        adj[a, b] = 1
        adj[b, a] = 1
    return adj


def _candidates(g: Graph, p: Pattern) -> list[list[int]] | None:
    by_color: dict[int, list[int]] = {}
    for i, c in enumerate(g.colors.tolist()):
        by_color.setdefault(c, []).append(i)
    cands = []
    for c in p.colors:
        nodes = by_color.get(c)
        if not nodes:
            return None
        cands.append(nodes)
    return cands


def occurs(g: Graph, p: Pattern, cap: int = DEFAULT_WITNESS_CAP) -> tuple[bool, list[tuple[int, ...]]]:
    """Whether every pattern color appears in ``g``; also up to ``cap`` witness tuples.

    Colors are distinct within a pattern, so witnesses are exactly the
    Cartesian selections of nodes matching each pattern color.
    """
    cands = _candidates(g, p)
    if cands is None:
        return False, []
    return True, list(itertools.islice(itertools.product(*cands), cap))


def connected_embedding(g: Graph, p: Pattern) -> tuple[bool, tuple[int, ...] | None]:
    """First (lexicographic) color-matching tuple S with A[S,S] >= A*."""
    cands = _candidates(g, p)
    if cands is None:
        return False, None
    adj = g.adjacency
    need = p.adjacency
    m = p.size
    chosen: list[int] = []

    def extend(k: int) -> bool:
        if k == m:
            return True
        for node in cands[k]:
            # colors are distinct, so tuple entries are automatically distinct nodes
            if all(adj[chosen[j], node] for j in range(k) if need[j, k]):
                chosen.append(node)
                if extend(k + 1):
                    return True
                chosen.pop()
        return False

    if extend(0):
        return True, tuple(chosen)
    return False, None


def classify_partition(g: Graph, p: Pattern) -> Partition:
    if connected_embedding(g, p)[0]:
        return Partition.D1
    if not occurs(g, p, cap=0)[0]:
        return Partition.D0
    return Partition.DPERP
