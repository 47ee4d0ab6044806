"""Synthesis of D1 / D0 / Dperp datasets on grids and on arbitrary host graphs."""

from __future__ import annotations

import itertools
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidAnchor, InvalidArgument, ParseError, SynthesisError
from .graph import (
    Graph,
    Partition,
    Pattern,
    classify_partition,
    dump_jsonl,
    grid_adjacency,
    load_jsonl,
)

RETRY_BUDGET = 100

_LABELS = {Partition.D1: 1, Partition.D0: 0, Partition.DPERP: None}
_STREAM = {Partition.D1: 1, Partition.D0: 0, Partition.DPERP: 2}


@dataclass
class SynthSpec:
    rows: int = 12
    cols: int = 12
    bg_colors: int = 4
    pattern: Pattern = field(default_factory=lambda: Pattern.chain((4, 5, 6)))
    per_partition_count: int = 144
    seed: int = 0
    # None means "same as per_partition_count"
    dperp_count: int | None = None
    # place every other 2-color D0 subset on adjacent nodes (connected fragments)
    d0_fragments: bool = True

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidArgument("grid dimensions must be positive")
        if self.bg_colors < 1:
            raise InvalidArgument("need at least one background color")
        if self.per_partition_count < 1:
            raise InvalidArgument("per_partition_count must be >= 1")
        if self.dperp_count is not None and self.dperp_count < 0:
            raise InvalidArgument("dperp_count must be >= 0")
        if self.rows * self.cols < self.pattern.size:
            raise InvalidArgument("grid too small to host the pattern")

    @property
    def background_palette(self) -> list[int]:
        used = set(self.pattern.colors)
        palette = []
        c = 0
        while len(palette) < self.bg_colors:
            if c not in used:
                palette.append(c)
            c += 1
        return palette

    @property
    def palette_size(self) -> int:
        return max(max(self.background_palette), max(self.pattern.colors)) + 1

    @property
    def num_dperp(self) -> int:
        return self.per_partition_count if self.dperp_count is None else self.dperp_count

    def to_json(self) -> dict:
        d = asdict(self)
        d["pattern"] = self.pattern.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        obj = dict(obj)
        obj["pattern"] = Pattern.from_json(obj["pattern"])
        return cls(**obj)


@dataclass
class PartitionedDataset:
    graphs: list[Graph]
    tags: list[Partition]
    pattern: Pattern
    palette_size: int
    spec: SynthSpec | None = None

    def __post_init__(self):
        if len(self.graphs) != len(self.tags):
            raise InvalidArgument("graphs and tags must be parallel lists")

    def partition(self, tag: Partition) -> list[Graph]:
        tag = Partition(tag)
        return [g for g, t in zip(self.graphs, self.tags) if t == tag]

    @property
    def d1(self) -> list[Graph]:
        return self.partition(Partition.D1)

    @property
    def d0(self) -> list[Graph]:
        return self.partition(Partition.D0)

    @property
    def dperp(self) -> list[Graph]:
        return self.partition(Partition.DPERP)

    def labeled(self) -> list[Graph]:
        """D1 and D0 graphs in dataset order, the training set."""
        return [g for g in self.graphs if g.label is not None]

    def counts(self) -> dict[str, int]:
        c = Counter(t.value for t in self.tags)
        return {t.value: c.get(t.value, 0) for t in Partition}

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for tag in Partition:
            dump_jsonl(self.partition(tag), os.path.join(directory, f"{tag.value}.jsonl"))
        with open(os.path.join(directory, "pattern.json"), "w") as fh:
            json.dump({**self.pattern.to_json(), "palette_size": self.palette_size}, fh, sort_keys=True)
            fh.write("\n")
        spec = self.spec.to_json() if self.spec is not None else None
        with open(os.path.join(directory, "spec.json"), "w") as fh:
            json.dump(spec, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "PartitionedDataset":
        path = os.path.join(directory, "pattern.json")
        try:
            with open(path) as fh:
                pobj = json.load(fh)
            pattern = Pattern.from_json(pobj)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad pattern file ({exc})", path) from None
        graphs: list[Graph] = []
        tags: list[Partition] = []
        for tag in Partition:
            p = os.path.join(directory, f"{tag.value}.jsonl")
            if os.path.exists(p):
                part = load_jsonl(p)
                graphs.extend(part)
                tags.extend([tag] * len(part))
        spec = None
        spec_path = os.path.join(directory, "spec.json")
        if os.path.exists(spec_path):
            with open(spec_path) as fh:
                sobj = json.load(fh)
            if sobj is not None:
                spec = SynthSpec.from_json(sobj)
        palette = pobj.get("palette_size")
        if palette is None:
            palette = max([max(pattern.colors)] + [g.palette_size() - 1 for g in graphs]) + 1
        return cls(graphs, tags, pattern, int(palette), spec)


# -- planting primitives ----------------------------------------------------


def plant_full(g: Graph, p: Pattern, anchor: int, rng: np.random.Generator) -> Graph:
    """Recolor ``anchor`` and ``M-1`` of its neighbours so the pattern is contained.

    Only star-shaped patterns (which includes the 3-chain) can be planted
    around a single anchor.  The result's ``anchor`` field is the anchor
    node followed by the recolored neighbours.
    """
    if not p.is_star:
        raise InvalidArgument("plant_full needs a star-shaped pattern; use plant_into_host")
    nbrs = g.neighbors(anchor)
    if len(nbrs) < p.size - 1:
        raise InvalidAnchor(f"anchor {anchor} has degree {len(nbrs)} < {p.size - 1}")
    center = p.center
    others = [k for k in range(p.size) if k != center]
    picked = rng.choice(np.array(nbrs), size=len(others), replace=False) if others else []
    colors = g.colors.copy()
    colors[anchor] = p.colors[center]
    for k, node in zip(others, picked):
        colors[node] = p.colors[k]
    return g.replace(colors=colors, anchor=(int(anchor), *(int(x) for x in picked)))


def plant_partial(g: Graph, p: Pattern, subset_size: int, rng: np.random.Generator,
                  *, colors: Sequence[int] | None = None, adjacent: bool = False) -> Graph:
    """Place a strict subset of the pattern colors on random distinct nodes.

    ``colors`` fixes the subset instead of drawing it; ``adjacent`` places a
    pair on two neighbouring nodes (a connected fragment of the pattern).
    """
    if not 1 <= subset_size < p.size:
        raise InvalidArgument(f"subset_size must be in [1, {p.size - 1}]")
    if subset_size > g.num_nodes:
        raise InvalidArgument("graph has fewer nodes than the subset")
    if colors is None:
        colors = rng.choice(np.array(p.colors), size=subset_size, replace=False).tolist()
    elif len(colors) != subset_size or not set(colors) < set(p.colors):
        raise InvalidArgument("colors must be a strict subset of the pattern colors")
    if adjacent and subset_size == 2:
        edges = g.edges()
        if not edges:
            raise InvalidArgument("graph has no edge for an adjacent placement")
        u, v = edges[int(rng.integers(len(edges)))]
        nodes = [u, v] if rng.random() < 0.5 else [v, u]
    else:
        nodes = rng.choice(g.num_nodes, size=subset_size, replace=False).tolist()
    new = g.colors.copy()
    for node, c in zip(nodes, colors):
        new[node] = c
    return g.replace(colors=new, anchor=None)


def _random_independent_set(adj: np.ndarray, size: int, rng, attempts: int) -> list[int] | None:
    n = adj.shape[0]
    for _ in range(attempts):
        chosen: list[int] = []
        for node in rng.permutation(n):
            if all(not adj[node, c] for c in chosen):
                chosen.append(int(node))
                if len(chosen) == size:
                    return chosen
    return None


def plant_scattered(g: Graph, p: Pattern, rng: np.random.Generator,
                    attempts: int = RETRY_BUDGET) -> Graph:
    """Place all pattern colors on pairwise non-adjacent nodes."""
    nodes = _random_independent_set(g.adjacency, p.size, rng, attempts)
    if nodes is None:
        raise SynthesisError(
            f"no independent set of size {p.size} found in {attempts} attempts "
            f"({g.num_nodes} nodes, {g.num_edges} edges)"
        )
    new = g.colors.copy()
    for node, c in zip(nodes, p.colors):
        new[node] = c
    return g.replace(colors=new, anchor=None)


# -- grid datasets ----------------------------------------------------------


def _grid_background(spec: SynthSpec, rng, adj: np.ndarray) -> Graph:
    colors = rng.choice(np.array(spec.background_palette), size=spec.rows * spec.cols)
    return Graph(colors, adj)


def _d0_schedule(p: Pattern) -> list[tuple[int, ...]]:
    out = []
    for size in range(1, min(2, p.size - 1) + 1):
        out.extend(itertools.combinations(p.colors, size))
    return out


def _verified(make, expected: Partition, p: Pattern, what: str) -> Graph:
    last = None
    for _ in range(RETRY_BUDGET):
        try:
            g = make()
        except SynthesisError as exc:
            last = str(exc)
            continue
        got = classify_partition(g, p)
        if got == expected:
            return g.replace(label=_LABELS[expected])
        last = f"sample classified as {got.value}"
    raise SynthesisError(f"{what}: retry budget of {RETRY_BUDGET} exhausted ({last})")


def synth_grid_sample(spec: SynthSpec, tag: Partition, index: int) -> Graph:
    """Sample ``index`` of partition ``tag``; depends only on (spec, tag, index)."""
    tag = Partition(tag)
    p = spec.pattern
    rng = np.random.default_rng([spec.seed, _STREAM[tag], index])
    adj = grid_adjacency(spec.rows, spec.cols)
    what = f"{tag.value}[{index}]"
    if tag is Partition.D1:
        deg = adj.sum(axis=1)
        eligible = np.flatnonzero(deg >= p.size - 1)
        if eligible.size == 0:
            raise SynthesisError(f"{what}: no grid node has degree >= {p.size - 1}")
        # sweep every eligible anchor once before reusing anchors at random
        if index < eligible.size:
            anchor = int(eligible[index])
        else:
            anchor = int(eligible[rng.integers(eligible.size)])
        return _verified(lambda: plant_full(_grid_background(spec, rng, adj), p, anchor, rng),
                         tag, p, what)
    if tag is Partition.D0:
        schedule = _d0_schedule(p)
        subset = schedule[index % len(schedule)]
        # pairs alternate between a connected fragment and a random placement
        adjacent = (spec.d0_fragments and len(subset) == 2
                    and (index // len(schedule)) % 2 == 0)
        return _verified(
            lambda: plant_partial(_grid_background(spec, rng, adj), p, len(subset), rng,
                                  colors=subset, adjacent=adjacent),
            tag, p, what)
    return _verified(lambda: plant_scattered(_grid_background(spec, rng, adj), p, rng),
                     tag, p, what)


def synth_grid_partition(spec: SynthSpec) -> PartitionedDataset:
    graphs: list[Graph] = []
    tags: list[Partition] = []
    plan = [
        (Partition.D1, spec.per_partition_count),
        (Partition.D0, spec.per_partition_count),
        (Partition.DPERP, spec.num_dperp),
    ]
    for tag, count in plan:
        for i in range(count):
            graphs.append(synth_grid_sample(spec, tag, i))
            tags.append(tag)
    return PartitionedDataset(graphs, tags, spec.pattern, spec.palette_size, spec)


# -- host-graph planting ----------------------------------------------------


def remap_host_colors(hosts: Sequence[Graph], p: Pattern) -> list[Graph]:
    """Shift host colors onto indices that avoid the pattern colors."""
    used = sorted({c for g in hosts for c in g.colors.tolist()})
    if not set(used) & set(p.colors):
        return list(hosts)
    free = (c for c in itertools.count() if c not in set(p.colors))
    mapping = {c: next(free) for c in used}
    lut = np.zeros(max(used) + 1, dtype=np.int64)
    for k, v in mapping.items():
        lut[k] = v
    return [g.replace(colors=lut[g.colors]) for g in hosts]


def _attach(g: Graph, colors: Sequence[int], internal: np.ndarray,
            host_anchors: list[int], targets: list[int]) -> tuple[Graph, list[int]]:
    """Append nodes with ``colors`` / ``internal`` edges; wire targets[k] to host_anchors[k]."""
    n = g.num_nodes
    m = len(colors)
    adj = np.zeros((n + m, n + m), dtype=np.uint8)
    adj[:n, :n] = g.adjacency
    adj[n:, n:] = internal
    for h, t in zip(host_anchors, targets):
        adj[h, n + t] = adj[n + t, h] = 1
    new_colors = np.concatenate([g.colors, np.array(colors, dtype=np.int64)])
    return Graph(new_colors, adj), list(range(n, n + m))


def _plant_host_full(g: Graph, p: Pattern, rng) -> Graph:
    m = p.size
    r = int(rng.integers(1, max(m, 2)))
    r = min(r, g.num_nodes)
    hosts = rng.choice(g.num_nodes, size=r, replace=False).tolist()
    targets = rng.integers(m, size=r).tolist()
    out, new_nodes = _attach(g, p.colors, p.adjacency, hosts, targets)
    center = p.center
    anchor = (new_nodes[center], *(new_nodes[k] for k in range(m) if k != center))
    return out.replace(anchor=anchor)


def _plant_host_partial(g: Graph, p: Pattern, rng) -> Graph:
    m = p.size
    if m < 2:
        raise InvalidArgument("partial planting needs a pattern with >= 2 nodes")
    missing = int(rng.integers(m))
    keep = [k for k in range(m) if k != missing]
    out = g
    for _ in range(2):
        size = int(rng.integers(1, len(keep) + 1))
        part = sorted(rng.choice(np.array(keep), size=size, replace=False).tolist())
        internal = p.adjacency[np.ix_(part, part)]
        r = min(int(rng.integers(1, len(part) + 1)), out.num_nodes)
        hosts = rng.choice(out.num_nodes, size=r, replace=False).tolist()
        targets = rng.integers(len(part), size=r).tolist()
        out, _ = _attach(out, [p.colors[k] for k in part], internal, hosts, targets)
    return out


def _plant_host_scattered(g: Graph, p: Pattern, rng) -> Graph:
    m = p.size
    hosts = _random_independent_set(g.adjacency, m, rng, attempts=10)
    if hosts is None:
        hosts = rng.choice(g.num_nodes, size=min(m, g.num_nodes), replace=False).tolist()
        hosts = [hosts[k % len(hosts)] for k in range(m)]
    internal = np.zeros((m, m), dtype=np.uint8)
    out, _ = _attach(g, p.colors, internal, hosts, list(range(m)))
    return out


_HOST_MODES = {
    "full": (_plant_host_full, Partition.D1),
    "partial": (_plant_host_partial, Partition.D0),
    "scattered": (_plant_host_scattered, Partition.DPERP),
}


def plant_into_host(hosts: Sequence[Graph], p: Pattern, mode: str,
                    rng: np.random.Generator) -> PartitionedDataset:
    """Plant the pattern into each host graph by adding new nodes.

    ``full`` adds the whole pattern and wires it to a few random host nodes,
    ``partial`` adds two fragments whose union misses at least one pattern
    color, ``scattered`` adds every pattern node without pattern-internal
    edges.  Host colors that collide with the pattern are remapped first.
    """
    if mode not in _HOST_MODES:
        raise InvalidArgument(f"mode must be one of {sorted(_HOST_MODES)}")
    planter, tag = _HOST_MODES[mode]
    hosts = remap_host_colors(hosts, p)
    out = []
    for i, host in enumerate(hosts):
        out.append(_verified(lambda: planter(host, p, rng), tag, p, f"{mode}[{i}]"))
    palette = max([max(p.colors)] + [g.palette_size() - 1 for g in out]) + 1
    return PartitionedDataset(out, [tag] * len(out), p, palette)


def merge(*parts: PartitionedDataset) -> PartitionedDataset:
    if not parts:
        raise InvalidArgument("nothing to merge")
    graphs, tags = [], []
    for part in parts:
        graphs.extend(part.graphs)
        tags.extend(part.tags)
    return PartitionedDataset(graphs, tags, parts[0].pattern,
                              max(p.palette_size for p in parts))


# -- verification -----------------------------------------------------------


@dataclass
class VerificationReport:
    mismatches: list[tuple[int, str, str]]
    label_errors: list[int]
    counts: dict[str, int]
    parity_ok: bool
    palette_disjoint: bool
    color_histogram: dict[int, int]

    @property
    def ok(self) -> bool:
        return (not self.mismatches and not self.label_errors
                and self.parity_ok and self.palette_disjoint)

    def lines(self) -> list[str]:
        out = [f"counts: {self.counts}", f"label parity: {'ok' if self.parity_ok else 'VIOLATED'}",
               f"palette disjoint: {self.palette_disjoint}",
               f"mismatches: {len(self.mismatches)}", f"label errors: {len(self.label_errors)}"]
        for idx, want, got in self.mismatches:
            out.append(f"  graph {idx}: tagged {want}, classified {got}")
        return out


def verify_partition(ds: PartitionedDataset) -> VerificationReport:
    mismatches = []
    label_errors = []
    hist: Counter = Counter()
    disjoint = True
    pattern_colors = set(ds.pattern.colors)
    background = None if ds.spec is None else set(ds.spec.background_palette)
    allowed = pattern_colors | (background or set())
    if background is not None and background & pattern_colors:
        disjoint = False
    for idx, (g, tag) in enumerate(zip(ds.graphs, ds.tags)):
        got = classify_partition(g, ds.pattern)
        if got != tag:
            mismatches.append((idx, tag.value, got.value))
        if g.label != _LABELS[tag]:
            label_errors.append(idx)
        hist.update(g.colors.tolist())
        if background is not None:
            # grid samples: every node is background or one of the planted pattern nodes
            planted = [c for c in g.colors.tolist() if c in pattern_colors]
            if len(planted) != len(set(planted)) or not set(g.colors.tolist()) <= allowed:
                disjoint = False
    counts = ds.counts()
    return VerificationReport(
        mismatches=mismatches,
        label_errors=label_errors,
        counts=counts,
        parity_ok=counts["d1"] == counts["d0"],
        palette_disjoint=disjoint,
        color_histogram=dict(sorted(hist.items())),
    )
