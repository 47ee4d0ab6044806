"""Experiment drivers: bias probe, size generalization, temperature sweep, classifier ablation.

Every experiment is a pure function of its ``ExperimentConfig``: datasets,
initial weights and batch order are all derived from ``cfg.seed``.  Each
(model, pooling, seed) cell is trained independently; a row whose final
train accuracy falls below ``cfg.min_train_acc`` is flagged and left out of
the summary rows of the bias probe and generalization tables.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, ParseError
from .graph import Graph, Pattern
from .model import Conv, ModelParams, Nonlinearity, Pooling, init_model, predict_labels, prepare_all
from .synth import PartitionedDataset, SynthSpec, synth_grid_partition
from .training import TrainConfig, evaluate, train

# offsets that keep the unseen test grids disjoint from the training stream
TEST_SEED_OFFSET = 10_000
TEST13_SEED_OFFSET = 20_000


@dataclass
class ExperimentConfig:
    # data
    rows: int = 12
    cols: int = 12
    bg_colors: int = 4
    pattern: str = "chain:4,5,6"
    per_partition_count: int = 144
    dperp_count: int | None = None
    d0_fragments: bool = True
    test_rows: int = 13
    test_cols: int = 13
    test_count: int = 150
    # model
    conv: str = "gcn"
    hidden: int = 16
    nonlinearity: str = "identity"
    init_scale: float = 0.1
    beta: float = 1.0
    # optimisation
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int | None = 8
    optimizer: str = "adam"
    # the one-channel model of the ablation learns slowly at the base rate
    bare_learning_rate: float = 0.01
    bare_epochs: int = 300
    # protocol
    seed: int = 0
    num_seeds: int = 3
    min_train_acc: float = 0.97
    poolings: str = "max,avg,attn"
    betas: str = "1,4,10,300"

    def __post_init__(self):
        if self.num_seeds < 1:
            raise InvalidArgument("num_seeds must be >= 1")
        parse_pattern(self.pattern)
        for b in self.beta_list():
            if not b > 0:
                raise InvalidArgument(f"temperature must be positive, got {b}")
        self.pooling_list()
        Conv(self.conv)
        Nonlinearity(self.nonlinearity)

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.num_seeds)]

    def pooling_list(self) -> list[Pooling]:
        try:
            return [Pooling(s.strip()) for s in self.poolings.split(",") if s.strip()]
        except ValueError as exc:
            raise InvalidArgument(f"bad pooling list {self.poolings!r}") from exc

    def beta_list(self) -> list[float]:
        try:
            return [float(s) for s in self.betas.split(",") if s.strip()]
        except ValueError as exc:
            raise InvalidArgument(f"bad beta list {self.betas!r}") from exc

    def synth_spec(self, seed: int, rows=None, cols=None, count=None, dperp=None) -> SynthSpec:
        return SynthSpec(rows=rows or self.rows, cols=cols or self.cols, bg_colors=self.bg_colors,
                         pattern=parse_pattern(self.pattern),
                         per_partition_count=count or self.per_partition_count, seed=seed,
                         dperp_count=self.dperp_count if dperp is None else dperp,
                         d0_fragments=self.d0_fragments)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, seed=seed, optimizer=self.optimizer,
                           log_every=10**9)

    def bare_variant(self) -> "ExperimentConfig":
        return dataclasses.replace(self, learning_rate=self.bare_learning_rate, epochs=self.bare_epochs)

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


def parse_pattern(text: str) -> Pattern:
    """``chain:4,5,6`` or ``star:5:4,6,7`` (center, then leaves)."""
    try:
        kind, _, rest = text.partition(":")
        if kind == "chain":
            return Pattern.chain([int(c) for c in rest.split(",")])
        if kind == "star":
            center, _, leaves = rest.partition(":")
            return Pattern.star(int(center), [int(c) for c in leaves.split(",")])
    except ValueError as exc:
        raise InvalidArgument(f"bad pattern {text!r}: {exc}") from exc
    raise InvalidArgument(f"bad pattern {text!r}; expected chain:a,b,c or star:c:l1,l2")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value: str, location: str):
    kind = _FIELD_TYPES[key]
    value = value.strip()
    try:
        if "None" in kind and value.lower() in ("", "none", "full"):
            return None
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}", location) from exc
    return value


def config_from_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None,
                      location: str = "config") -> ExperimentConfig:
    values = (base or ExperimentConfig()).snapshot()
    for key, raw in pairs.items():
        if key not in _FIELD_TYPES:
            raise ParseError(f"unknown key {key!r}", location)
        values[key] = _coerce(key, raw, location)
    return ExperimentConfig(**values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", f"{path}:{lineno}")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v
    return config_from_pairs(pairs, base, str(path))


# -- reports ----------------------------------------------------------------


@dataclass
class ExperimentReport:
    experiment: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    wall_clock: float = 0.0

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.6g}")
    if isinstance(v, np.integer):
        return int(v)
    return v


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for r in report.rows:
        w.writerow([_cell(r.get(c)) for c in report.columns])
    return buf.getvalue()


def report_json(report: ExperimentReport) -> str:
    obj = {
        "experiment": report.experiment,
        "config": report.config,
        "seeds": report.seeds,
        "columns": report.columns,
        "rows": [{c: _json_value(r.get(c)) for c in report.columns} for r in report.rows],
        "wall_clock": round(report.wall_clock, 3),
    }
    return json.dumps(obj, indent=2) + "\n"


def emit_report(report: ExperimentReport, fmt: str, path) -> None:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    else:
        raise InvalidArgument(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def report_from_json(obj: dict) -> ExperimentReport:
    try:
        return ExperimentReport(obj["experiment"], list(obj["columns"]), list(obj["rows"]),
                                dict(obj.get("config", {})), list(obj.get("seeds", [])),
                                float(obj.get("wall_clock", 0.0)))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"not a report: {exc}", "report") from exc


# -- building blocks --------------------------------------------------------


def build_dataset(cfg: ExperimentConfig, seed: int) -> PartitionedDataset:
    return synth_grid_partition(cfg.synth_spec(seed))


def make_model(cfg: ExperimentConfig, num_colors: int, pooling: Pooling, seed: int, *,
               beta: float | None = None, linear: bool = True) -> ModelParams:
    return init_model(num_colors, pooling, hidden=cfg.hidden, conv=Conv(cfg.conv),
                      beta=cfg.beta if beta is None else beta, seed=seed,
                      init_scale=cfg.init_scale, use_linear_classifier=linear,
                      nonlinearity=Nonlinearity(cfg.nonlinearity))


@dataclass
class Cell:
    params: ModelParams
    train_loss: float
    train_acc: float
    flagged: bool


def train_cell(cfg: ExperimentConfig, ds: PartitionedDataset, pooling: Pooling, seed: int, *,
               beta: float | None = None, linear: bool = True) -> Cell:
    model = make_model(cfg, ds.palette_size, pooling, seed, beta=beta, linear=linear)
    params, trace = train(model, ds.labeled(), cfg.train_config(seed))
    loss, acc = trace.final["loss"], trace.final["train_acc"]
    return Cell(params, loss, acc, acc < cfg.min_train_acc)


def label_counts(graphs: Sequence[Graph], params: ModelParams) -> tuple[int, int]:
    if not graphs:
        return 0, 0
    labels = predict_labels(graphs, params)
    ones = int(labels.sum())
    return len(labels) - ones, ones


def majority(y0: int, y1: int) -> int | None:
    if y0 == y1:
        return None
    return int(y1 > y0)


def majority_vote(labels: Sequence[int | None]) -> int | None:
    votes = Counter(v for v in labels if v is not None)
    if not votes or votes[0] == votes[1]:
        return None
    return 1 if votes[1] > votes[0] else 0


def accuracy(graphs: Sequence[Graph], params: ModelParams) -> float:
    if not graphs:
        return float("nan")
    return evaluate(prepare_all(graphs, params), params)[1]


def _finish(name, columns, rows, cfg, start) -> ExperimentReport:
    return ExperimentReport(name, columns, rows, cfg.snapshot(), cfg.seeds(), time.perf_counter() - start)


# -- experiments ------------------------------------------------------------

PROBE_COLUMNS = ["conv", "pooling", "seed", "train_loss", "train_acc", "flagged",
                 "dperp_y0", "dperp_y1", "majority"]


def run_bias_probe(cfg: ExperimentConfig) -> ExperimentReport:
    """Label counts assigned to D-perp by models trained on D1 vs D0.

    Per-seed rows are followed by one summary row per pooling (``seed`` is
    ``"all"``) holding the majority vote over unflagged seeds.
    """
    start = time.perf_counter()
    rows = []
    for pooling in cfg.pooling_list():
        per_seed = []
        for seed in cfg.seeds():
            ds = build_dataset(cfg, seed)
            cell = train_cell(cfg, ds, pooling, seed)
            y0, y1 = label_counts(ds.dperp, cell.params)
            row = {"conv": cfg.conv, "pooling": pooling.value, "seed": seed,
                   "train_loss": cell.train_loss, "train_acc": cell.train_acc,
                   "flagged": cell.flagged, "dperp_y0": y0, "dperp_y1": y1, "majority": majority(y0, y1)}
            per_seed.append(row)
        rows.extend(per_seed)
        ok = [r for r in per_seed if not r["flagged"]]
        rows.append({"conv": cfg.conv, "pooling": pooling.value, "seed": "all",
                     "train_acc": _mean([r["train_acc"] for r in ok]), "flagged": not ok,
                     "dperp_y0": sum(r["dperp_y0"] for r in ok), "dperp_y1": sum(r["dperp_y1"] for r in ok),
                     "majority": majority_vote([r["majority"] for r in ok])})
    return _finish("bias_probe", PROBE_COLUMNS, rows, cfg, start)


GEN_COLUMNS = ["conv", "pooling", "seed", "train_loss", "train_acc", "flagged", "test_acc_train_size",
               "test_acc_large"]


def run_generalization(cfg: ExperimentConfig) -> ExperimentReport:
    """Train on the base grid size and test on unseen grids of the base and the larger size.

    Test sets hold D1 and D0 graphs only.  Summary rows average over
    unflagged seeds.
    """
    start = time.perf_counter()
    rows = []
    for pooling in cfg.pooling_list():
        per_seed = []
        for seed in cfg.seeds():
            ds = build_dataset(cfg, seed)
            cell = train_cell(cfg, ds, pooling, seed)
            same = synth_grid_partition(cfg.synth_spec(seed + TEST_SEED_OFFSET, count=cfg.test_count, dperp=0))
            big = synth_grid_partition(cfg.synth_spec(seed + TEST13_SEED_OFFSET, rows=cfg.test_rows,
                                                      cols=cfg.test_cols, count=cfg.test_count, dperp=0))
            per_seed.append({"conv": cfg.conv, "pooling": pooling.value, "seed": seed,
                             "train_loss": cell.train_loss, "train_acc": cell.train_acc, "flagged": cell.flagged,
                             "test_acc_train_size": accuracy(same.labeled(), cell.params),
                             "test_acc_large": accuracy(big.labeled(), cell.params)})
        rows.extend(per_seed)
        ok = [r for r in per_seed if not r["flagged"]]
        rows.append({"conv": cfg.conv, "pooling": pooling.value, "seed": "all",
                     "train_loss": _mean([r["train_loss"] for r in ok]),
                     "train_acc": _mean([r["train_acc"] for r in ok]), "flagged": not ok,
                     "test_acc_train_size": _mean([r["test_acc_train_size"] for r in ok]),
                     "test_acc_large": _mean([r["test_acc_large"] for r in ok])})
    return _finish("generalization", GEN_COLUMNS, rows, cfg, start)


SWEEP_COLUMNS = ["beta", "seed", "train_loss", "train_acc", "flagged", "dperp_y0", "dperp_y1", "majority"]


def run_beta_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Attention pooling at each temperature with an identical training budget.

    Summary rows count unflagged seeds only.
    """
    start = time.perf_counter()
    rows = []
    for beta in cfg.beta_list():
        per_seed = []
        for seed in cfg.seeds():
            ds = build_dataset(cfg, seed)
            cell = train_cell(cfg, ds, Pooling.ATTN, seed, beta=beta)
            y0, y1 = label_counts(ds.dperp, cell.params)
            per_seed.append({"beta": beta, "seed": seed, "train_loss": cell.train_loss,
                             "train_acc": cell.train_acc, "flagged": cell.flagged,
                             "dperp_y0": y0, "dperp_y1": y1, "majority": majority(y0, y1)})
        rows.extend(per_seed)
        ok = [r for r in per_seed if not r["flagged"]]
        rows.append({"beta": beta, "seed": "all", "train_acc": _mean([r["train_acc"] for r in ok]),
                     "flagged": not ok,
                     "dperp_y0": sum(r["dperp_y0"] for r in ok),
                     "dperp_y1": sum(r["dperp_y1"] for r in ok),
                     "majority": majority_vote([r["majority"] for r in ok])})
    return _finish("beta_sweep", SWEEP_COLUMNS, rows, cfg, start)


ABLATION_COLUMNS = ["pooling", "seed", "linear_train_acc", "linear_flagged", "linear_y0", "linear_y1",
                    "linear_majority", "bare_train_acc", "bare_flagged", "bare_y0", "bare_y1",
                    "bare_majority", "agree"]


def run_nolinear_ablation(cfg: ExperimentConfig) -> ExperimentReport:
    """D-perp labels with and without the linear classifier, per pooling kind.

    Without the classifier the convolution maps straight to one channel and
    trains with the ``bare_*`` budget.
    """
    start = time.perf_counter()
    rows = []
    for pooling in cfg.pooling_list():
        per_seed = []
        for seed in cfg.seeds():
            ds = build_dataset(cfg, seed)
            row = {"pooling": pooling.value, "seed": seed}
            for prefix, linear, budget in (("linear", True, cfg), ("bare", False, cfg.bare_variant())):
                cell = train_cell(budget, ds, pooling, seed, linear=linear)
                y0, y1 = label_counts(ds.dperp, cell.params)
                row.update({f"{prefix}_train_acc": cell.train_acc, f"{prefix}_flagged": cell.flagged,
                            f"{prefix}_y0": y0, f"{prefix}_y1": y1, f"{prefix}_majority": majority(y0, y1)})
            row["agree"] = row["linear_majority"] == row["bare_majority"]
            per_seed.append(row)
        rows.extend(per_seed)
        summary = {"pooling": pooling.value, "seed": "all"}
        for prefix in ("linear", "bare"):
            ok = [r for r in per_seed if not r[f"{prefix}_flagged"]]
            summary.update({
                f"{prefix}_train_acc": _mean([r[f"{prefix}_train_acc"] for r in ok]),
                f"{prefix}_flagged": not ok,
                f"{prefix}_y0": sum(r[f"{prefix}_y0"] for r in ok),
                f"{prefix}_y1": sum(r[f"{prefix}_y1"] for r in ok),
                f"{prefix}_majority": majority_vote([r[f"{prefix}_majority"] for r in ok]),
            })
        summary["agree"] = (summary["linear_majority"] is not None
                            and summary["linear_majority"] == summary["bare_majority"])
        rows.append(summary)
    return _finish("nolinear_ablation", ABLATION_COLUMNS, rows, cfg, start)


def summary_rows(report: ExperimentReport) -> list[dict]:
    return [r for r in report.rows if r.get("seed") == "all"]


def _mean(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


EXPERIMENTS = {
    "probe": run_bias_probe,
    "generalize": run_generalization,
    "sweep-beta": run_beta_sweep,
    "ablate-linear": run_nolinear_ablation,
}
