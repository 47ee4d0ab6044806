"""Exhaustive discriminative-subgraph search over small connected subgraphs.

Every connected node subset of size <= k is turned into a canonical key
(brute force over all node orders, fine for k <= 5).  The search keeps the
keys present in every positive graph and absent from every negative one.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument
from .graph import Graph

MAX_K = 5


@dataclass(frozen=True, order=True)
class CanonicalSubgraph:
    """Isomorphism-invariant key of a small color-attributed graph.

    ``bits`` packs the upper triangle of the adjacency matrix, row by row,
    under the node order that minimises ``(colors, bits)``.
    """

    size: int
    colors: tuple[int, ...]
    bits: int

    def edges(self) -> list[tuple[int, int]]:
        out = []
        pairs = list(itertools.combinations(range(self.size), 2))
        for pos, (i, j) in enumerate(pairs):
            if self.bits >> (len(pairs) - 1 - pos) & 1:
                out.append((i, j))
        return out

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.size, self.size), dtype=np.int8)
        for i, j in self.edges():
            a[i, j] = a[j, i] = 1
        return a

    def as_graph(self) -> Graph:
        return Graph.from_edges(list(self.colors), self.edges())

    def to_json(self) -> dict:
        return {"size": self.size, "colors": list(self.colors), "edges": [list(e) for e in self.edges()]}


def _pack(adj: np.ndarray, order: Sequence[int]) -> int:
    bits = 0
    for i, j in itertools.combinations(range(len(order)), 2):
        bits = (bits << 1) | int(adj[order[i], order[j]])
    return bits


@lru_cache(maxsize=None)
def _canonical_cached(colors: tuple[int, ...], edge_bits: int, m: int) -> CanonicalSubgraph:
    adj = np.zeros((m, m), dtype=np.int8)
    pairs = list(itertools.combinations(range(m), 2))
    for pos, (i, j) in enumerate(pairs):
        if edge_bits >> (len(pairs) - 1 - pos) & 1:
            adj[i, j] = adj[j, i] = 1
    best = None
    for perm in itertools.permutations(range(m)):
        key = (tuple(colors[p] for p in perm), _pack(adj, perm))
        if best is None or key < best:
            best = key
    return CanonicalSubgraph(m, best[0], best[1])


def canonical(colors: Sequence[int], adjacency: np.ndarray) -> CanonicalSubgraph:
    m = len(colors)
    if m == 0:
        raise InvalidArgument("empty subgraph")
    if m > MAX_K:
        raise InvalidArgument(f"canonicalization is brute force and limited to {MAX_K} nodes, got {m}")
    adjacency = np.asarray(adjacency)
    return _canonical_cached(tuple(int(c) for c in colors), _pack(adjacency, range(m)), m)


def connected_subsets(g: Graph, k: int) -> Iterable[tuple[int, ...]]:
    """Every connected node subset of size 1..k, each exactly once, as sorted tuples."""
    nbrs = [set(int(j) for j in g.neighbors(i)) for i in range(g.num_nodes)]
    # grow from the smallest node v, only ever adding nodes larger than v
    for v in range(g.num_nodes):
        seen = {(v,)}
        frontier = [frozenset([v])]
        yield (v,)
        for _ in range(k - 1):
            nxt = []
            for s in frontier:
                ext = set().union(*(nbrs[u] for u in s)) - s
                for u in ext:
                    if u <= v:
                        continue
                    t = tuple(sorted(s | {u}))
                    if t not in seen:
                        seen.add(t)
                        nxt.append(frozenset(t))
                        yield t
            frontier = nxt


def enumerate_subgraphs(g: Graph, k: int) -> set[CanonicalSubgraph]:
    """Canonical keys of all connected induced subgraphs with at most ``k`` nodes."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if k > MAX_K:
        raise InvalidArgument(f"k={k} exceeds the enumeration guard of {MAX_K}")
    colors = g.colors
    adj = g.adjacency
    out = set()
    for s in connected_subsets(g, k):
        idx = list(s)
        out.add(canonical(colors[idx], adj[np.ix_(idx, idx)]))
    return out


def exhaustive_search(d1: Sequence[Graph], d0: Sequence[Graph], k: int) -> set[CanonicalSubgraph]:
    """Subgraphs (size <= k) found in every graph of ``d1`` and in no graph of ``d0``."""
    if not d1:
        raise InvalidArgument("the positive set must be nonempty")
    common: set[CanonicalSubgraph] | None = None
    for g in d1:
        s = enumerate_subgraphs(g, k)
        common = s if common is None else common & s
        if not common:
            return set()
    for g in d0:
        common -= enumerate_subgraphs(g, k)
        if not common:
            break
    return common


def contains(g: Graph, sub: CanonicalSubgraph) -> bool:
    """Non-induced containment: some distinct node tuple matches colors and A[S,S] >= A*."""
    want = sub.adjacency()
    m = sub.size
    cand = [np.flatnonzero(g.colors == c) for c in sub.colors]
    adj = g.adjacency

    def extend(chosen: list[int]) -> bool:
        i = len(chosen)
        if i == m:
            return True
        for u in cand[i]:
            u = int(u)
            if u in chosen:
                continue
            if all(adj[chosen[j], u] >= want[j, i] for j in range(i)):
                chosen.append(u)
                if extend(chosen):
                    return True
                chosen.pop()
        return False

    return extend([])


def coverage(sub: CanonicalSubgraph, graphs: Sequence[Graph]) -> float:
    if not graphs:
        return float("nan")
    return sum(contains(g, sub) for g in graphs) / len(graphs)


def search_report(result: Iterable[CanonicalSubgraph], d1: Sequence[Graph], d0: Sequence[Graph]) -> list[dict]:
    rows = []
    for sub in sorted(result):
        row = sub.to_json()
        row["d1_coverage"] = coverage(sub, d1)
        row["d0_coverage"] = coverage(sub, d0) if d0 else 0.0
        rows.append(row)
    return rows


def write_search_json(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
