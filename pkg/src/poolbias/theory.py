"""Alignment quantities for theory-mode attention pooling.

Theory mode uses raw neighborhood aggregates ``v_i = ((A + I) X)_i`` as node
representations, so every quantity here is exact integer arithmetic on
one-hot color counts apart from the attention weights.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .graph import Graph, Pattern
from .model import ModelParams, Pooling, attention_weights
from .synth import PartitionedDataset


def v_star(p: Pattern, num_colors: int) -> np.ndarray:
    """Indicator vector of the pattern colors (sum of their one-hot rows)."""
    if max(p.colors) >= num_colors:
        raise InvalidArgument(f"pattern color {max(p.colors)} outside palette of size {num_colors}")
    v = np.zeros(num_colors)
    v[list(p.colors)] = 1.0
    return v


def theory_reps(g: Graph, num_colors: int, open_neighborhood: bool = False) -> np.ndarray:
    a = g.adjacency.astype(np.float64)
    if not open_neighborhood:
        a = a + np.eye(g.num_nodes)
    return a @ g.one_hot(num_colors)


def _anchor(g: Graph) -> int:
    if g.anchor is None or len(g.anchor) == 0:
        raise InvalidArgument("probe graph carries no anchor metadata")
    return int(g.anchor[0])


# -- dataset-level checks ---------------------------------------------------


@dataclass(frozen=True)
class TheoryBounds:
    theta: float  # largest v_i . v_j over distinct nodes of one graph
    theta_d: float  # largest v_i . v_i

    def __post_init__(self):
        if self.theta_d < self.theta:
            raise AssertionError(f"theta_d={self.theta_d} < theta={self.theta}")


def measure_bounds(ds: PartitionedDataset | Sequence[Graph], num_colors: int | None = None,
                   open_neighborhood: bool = False) -> TheoryBounds:
    graphs = ds.graphs if isinstance(ds, PartitionedDataset) else list(ds)
    if num_colors is None:
        if not isinstance(ds, PartitionedDataset):
            raise InvalidArgument("num_colors is required for a plain graph list")
        num_colors = ds.palette_size
    theta = -math.inf
    theta_d = -math.inf
    for g in graphs:
        r = theory_reps(g, num_colors, open_neighborhood)
        gram = r @ r.T
        theta_d = max(theta_d, float(np.diag(gram).max()))
        if g.num_nodes > 1:
            off = gram[~np.eye(g.num_nodes, dtype=bool)]
            theta = max(theta, float(off.max()))
    if theta_d == -math.inf:
        raise InvalidArgument("no graphs to measure")
    if theta == -math.inf:
        theta = 0.0
    return TheoryBounds(theta, theta_d)


@dataclass
class AnchorAlignment:
    values: list[float]  # <anchor rep, v*> per D1 graph

    @property
    def fraction(self) -> float:
        return sum(v > 0 for v in self.values) / len(self.values) if self.values else float("nan")

    @property
    def passed(self) -> bool:
        return bool(self.values) and all(v > 0 for v in self.values)


def anchor_alignment_check(ds: PartitionedDataset, open_neighborhood: bool = False) -> AnchorAlignment:
    vs = v_star(ds.pattern, ds.palette_size)
    out = []
    for g in ds.d1:
        r = theory_reps(g, ds.palette_size, open_neighborhood)
        out.append(float(r[_anchor(g)] @ vs))
    return AnchorAlignment(out)


def full_color_nodes(g: Graph, p: Pattern, num_colors: int, open_neighborhood: bool = False) -> list[int]:
    """Nodes whose aggregate sees every pattern color."""
    r = theory_reps(g, num_colors, open_neighborhood)
    hit = (r[:, list(p.colors)] > 0).all(axis=1)
    return [int(i) for i in np.flatnonzero(hit)]


def orthogonal_directions(p: Pattern, num_colors: int) -> list[np.ndarray]:
    """Fixed test directions orthogonal to v* inside the pattern-color span."""
    out = []
    for i, j in itertools.permutations(p.colors, 2):
        u = np.zeros(num_colors)
        u[i], u[j] = 1.0, -1.0
        out.append(u)
    m = len(p.colors)
    for c in p.colors:
        u = np.zeros(num_colors)
        u[list(p.colors)] = 1.0
        u[c] = -(m - 1.0)
        out.append(u)
        out.append(-u)
    return out


def blocking_d0_graphs(ds: PartitionedDataset, directions: Sequence[np.ndarray] | None = None,
                 open_neighborhood: bool = False) -> list[int | None]:
    """For each direction u, index (within D0) of a graph with all <rep, u> <= 0, or None."""
    vs = v_star(ds.pattern, ds.palette_size)
    if directions is None:
        directions = orthogonal_directions(ds.pattern, ds.palette_size)
    reps = [theory_reps(g, ds.palette_size, open_neighborhood) for g in ds.d0]
    found: list[int | None] = []
    for u in directions:
        u = np.asarray(u, dtype=np.float64)
        if abs(float(u @ vs)) > 1e-12:
            raise InvalidArgument("test direction is not orthogonal to v*")
        hit = next((k for k, r in enumerate(reps) if (r @ u <= 0).all()), None)
        found.append(hit)
    return found


# -- per-step alignment -----------------------------------------------------


@dataclass
class AlignmentRecord:
    step: int
    dot_w_vstar: float
    dot_a_vstar: float
    psi_s: float
    psi_max: float
    q: float | None
    alpha_s: float
    delta_w_vstar: float | None
    lemma5_fraction: float
    q_threshold: float | None = None
    train_acc: float | None = None


CSV_COLUMNS = ["step", "dot_w_vstar", "dot_a_vstar", "psi_s", "psi_max", "q", "alpha_s",
               "delta_w_vstar", "lemma5_fraction"]


def _require_theory_attn(model: ModelParams) -> None:
    if not (model.theory_mode and model.pooling is Pooling.ATTN):
        raise InvalidArgument("alignment tracking needs a theory-mode ATTN model")


def alignment_hook(model: ModelParams, vstar: np.ndarray, probe: Graph, *, step: int = 0,
                   probe_d0: Graph | None = None, delta_w: np.ndarray | None = None,
                   train_acc: float | None = None) -> AlignmentRecord:
    """Measure the alignment quantities on ``probe`` (a D1 graph with an anchor).

    ``psi_max`` is the largest ``v_i . w`` over non-anchor nodes; ``q`` is
    ``psi_s / psi_max`` when ``psi_max > 0``.  The q threshold uses
    the attention weight of that maximizing node on ``probe`` and of the
    same node index on ``probe_d0``.
    """
    _require_theory_attn(model)
    s = _anchor(probe)
    reps = theory_reps(probe, model.num_colors, model.open_neighborhood)
    w, a = model.classifier, model.attn
    alpha = attention_weights(reps, model)
    scores_w = reps @ w
    scores_a = reps @ a
    others = np.array([i for i in range(probe.num_nodes) if i != s])
    psi_s = float(scores_w[s])
    j = int(others[np.argmax(scores_w[others])])
    psi_max = float(scores_w[j])
    q = psi_s / psi_max if psi_max > 0 else None
    sat = (w @ vstar > scores_w[others]) & (a @ vstar > scores_a[others])
    threshold = None
    if probe_d0 is not None and probe_d0.num_nodes > j:
        reps0 = theory_reps(probe_d0, model.num_colors, model.open_neighborhood)
        beta0 = attention_weights(reps0, model)
        a_s, a_j = float(alpha[s]), float(alpha[j])
        denom = a_s * (1.0 - a_s) + a_j * a_s
        if denom > 0:
            threshold = (float(beta0[j]) - a_j) / denom + 1.0
    return AlignmentRecord(
        step=step,
        dot_w_vstar=float(w @ vstar),
        dot_a_vstar=float(a @ vstar),
        psi_s=psi_s,
        psi_max=psi_max,
        q=q,
        alpha_s=float(alpha[s]),
        delta_w_vstar=None if delta_w is None else float(np.asarray(delta_w).reshape(-1) @ vstar),
        lemma5_fraction=float(sat.mean()),
        q_threshold=threshold,
        train_acc=train_acc,
    )


class AlignmentMonitor:
    """Training monitor that records an AlignmentRecord at every logged step."""

    def __init__(self, vstar: np.ndarray, probe: Graph, probe_d0: Graph | None = None):
        self.vstar = np.asarray(vstar, dtype=np.float64)
        self.probe = probe
        self.probe_d0 = probe_d0
        self.records: list[AlignmentRecord] = []

    @classmethod
    def for_dataset(cls, ds: PartitionedDataset) -> "AlignmentMonitor":
        if not ds.d1:
            raise InvalidArgument("dataset has no D1 graph to probe")
        return cls(v_star(ds.pattern, ds.palette_size), ds.d1[0], ds.d0[0] if ds.d0 else None)

    def __call__(self, params: ModelParams, info) -> dict:
        dw = None if info.delta is None else info.delta.get("classifier")
        rec = alignment_hook(params, self.vstar, self.probe, step=info.step, probe_d0=self.probe_d0,
                             delta_w=dw, train_acc=info.train_acc)
        self.records.append(rec)
        return {k: getattr(rec, k) for k in CSV_COLUMNS if k != "step"}


def write_alignment_csv(records: Sequence[AlignmentRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_COLUMNS])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class PreservationSummary:
    steps: int
    delta_positive_fraction: float | None  # over updates taken while train_acc < 1
    lemma5_fraction: float | None
    first_q_above_threshold: int | None
    final_dot_w_positive: bool
    final_dot_a_positive: bool
    undefined: bool  # no update was observed

    def lines(self) -> list[str]:
        return [f"{f.name}: {getattr(self, f.name)}" for f in fields(self)]

    def as_dict(self) -> dict:
        return asdict(self)


def preservation_report(trace: Sequence[AlignmentRecord]) -> PreservationSummary:
    if not trace:
        raise InvalidArgument("empty alignment trace")
    steps = [r.step for r in trace]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidArgument("alignment trace steps must be strictly increasing")
    # record k holds the update that produced it, taken from the state of record k-1
    deltas = [cur.delta_w_vstar for prev, cur in zip(trace, trace[1:])
              if cur.delta_w_vstar is not None and (prev.train_acc is None or prev.train_acc < 1.0)]
    undefined = len(deltas) == 0
    frac = None if undefined else sum(d > 0 for d in deltas) / len(deltas)
    lemma5 = float(np.mean([r.lemma5_fraction for r in trace]))
    first_q = next((r.step for r in trace
                    if r.q is not None and r.q_threshold is not None and r.q > r.q_threshold), None)
    last = trace[-1]
    return PreservationSummary(
        steps=len(trace),
        delta_positive_fraction=frac,
        lemma5_fraction=lemma5,
        first_q_above_threshold=first_q,
        final_dot_w_positive=last.dot_w_vstar > 0,
        final_dot_a_positive=last.dot_a_vstar > 0,
        undefined=undefined,
    )

