"""Command-line entry point: ``poolbias <command> [options]``.

Exit status is 0 on success, 1 when input fails validation (bad config,
malformed files, failed checks) and 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import InvalidArgument, ParseError, SynthesisError, TrainingError
from .graph import Graph, grid_graph, load_jsonl
from .model import Conv, Pooling, init_model, save_checkpoint
from .subgraphs import exhaustive_search, search_report, write_search_json
from .synth import PartitionedDataset, merge, plant_into_host, synth_grid_partition, verify_partition
from .theory import (
    AlignmentMonitor,
    anchor_alignment_check,
    measure_bounds,
    preservation_report,
    write_alignment_csv,
)
from .training import TrainConfig, grad_check, train

log = logging.getLogger("poolbias")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class CheckFailed(Exception):
    """A verification command ran fine but its check did not pass."""


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="plain-text key=value experiment config")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=["csv", "json"], default="csv", help="report format")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg = ex.config_from_pairs({"seed": str(args.seed)}, cfg)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> PartitionedDataset:
    return PartitionedDataset.load(path)


# -- commands ---------------------------------------------------------------


def cmd_gen_grid(args) -> None:
    cfg = _config(args)
    ds = synth_grid_partition(cfg.synth_spec(cfg.seed))
    out = _out(args)
    ds.save(out)
    print(json.dumps(ds.counts(), sort_keys=True))


def cmd_plant_host(args) -> None:
    cfg = _config(args)
    out = _out(args)
    if args.hosts:
        hosts = load_jsonl(args.hosts)
    else:
        rng = np.random.default_rng(cfg.seed)
        hosts = [grid_graph(cfg.rows, cfg.cols, range(cfg.bg_colors), int(s))
                 for s in rng.integers(0, 2**32, size=args.count)]
    pattern = ex.parse_pattern(cfg.pattern)
    rng = np.random.default_rng([cfg.seed, 7])
    parts = [plant_into_host(hosts, pattern, mode, rng) for mode in args.modes.split(",")]
    ds = merge(*parts) if len(parts) > 1 else parts[0]
    ds.save(out)
    print(json.dumps(ds.counts(), sort_keys=True))


def cmd_verify(args) -> None:
    report = verify_partition(_load_dataset(args.data))
    for line in report.lines():
        print(line)
    if not report.ok:
        raise CheckFailed("dataset failed verification")


def cmd_train(args) -> None:
    cfg = _config(args)
    ds = _load_dataset(args.data) if args.data else ex.build_dataset(cfg, cfg.seed)
    pooling = Pooling(args.pooling)
    model = ex.make_model(cfg, ds.palette_size, pooling, cfg.seed, linear=not args.no_classifier)
    tcfg = cfg.train_config(cfg.seed)
    tcfg.log_every = args.log_every
    params, trace = train(model, ds.labeled(), tcfg)
    out = _out(args)
    save_checkpoint(params, out / "model.json")
    trace.write_csv(out / "train_log.csv")
    final = trace.final
    print(f"loss={final['loss']:.6g} train_acc={final['train_acc']:.6g}")


def _run_experiment(name: str, args) -> None:
    cfg = _config(args)
    report = ex.EXPERIMENTS[name](cfg)
    path = _out(args) / f"{report.experiment}.{args.format}"
    ex.emit_report(report, args.format, path)
    sys.stdout.write(ex.report_csv(report))


def cmd_search(args) -> None:
    ds = _load_dataset(args.data)
    result = exhaustive_search(ds.d1, ds.d0, args.k)
    rows = search_report(result, ds.d1, ds.d0)
    write_search_json(rows, _out(args) / "search.json")
    print(json.dumps(rows, sort_keys=True))


def cmd_grad_check(args) -> None:
    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed)
    graphs = []
    for _ in range(args.graphs):
        n = int(rng.integers(2, 17))
        colors = rng.integers(0, 7, size=n)
        upper = np.triu(rng.random((n, n)) < 0.3, 1)
        edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]
        graphs.append(Graph.from_edges(n, colors, edges, label=int(rng.integers(0, 2))))
    failed = False
    for conv in (Conv.GCN, Conv.GAT):
        for pooling in (Pooling.SUM, Pooling.AVG, Pooling.ATTN, Pooling.MAX):
            model = init_model(7, pooling, hidden=cfg.hidden, conv=conv, seed=cfg.seed, init_scale=0.5)
            rep = grad_check(model, graphs, tol=args.tol)
            status = "pass" if rep.passed else "FAIL"
            worst = max(rep.max_rel_error.values(), default=0.0)
            print(f"{conv.value}+{pooling.value}: {status} max_rel_error={worst:.3g} "
                  f"checked={rep.graphs_checked} skipped={rep.skipped}")
            failed |= not rep.passed
    if failed:
        raise CheckFailed("gradient check failed")


def cmd_trace_alignment(args) -> None:
    cfg = _config(args)
    ds = _load_dataset(args.data) if args.data else ex.build_dataset(cfg, cfg.seed)
    model = init_model(ds.palette_size, Pooling.ATTN, theory_mode=True, beta=cfg.beta)
    monitor = AlignmentMonitor.for_dataset(ds)
    tcfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=cfg.seed)
    train(model, ds.labeled(), tcfg, [monitor])
    out = _out(args)
    write_alignment_csv(monitor.records, out / "alignment.csv")
    summary = preservation_report(monitor.records)
    bounds = measure_bounds(ds)
    aligned = anchor_alignment_check(ds)
    for line in summary.lines():
        print(line)
    print(f"theta: {bounds.theta:.6g}")
    print(f"theta_d: {bounds.theta_d:.6g}")
    print(f"anchor_aligned_fraction: {aligned.fraction:.6g}")


def cmd_report(args) -> None:
    try:
        obj = json.loads(Path(args.report).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), args.report) from exc
    report = ex.report_from_json(obj)
    if args.out == "-":
        sys.stdout.write(ex.report_csv(report) if args.format == "csv" else ex.report_json(report))
        return
    ex.emit_report(report, args.format, _out(args) / f"{report.experiment}.{args.format}")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="poolbias", description="Pooling-bias experiments on grid graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grid", parents=[common], help="synthesize the D1/D0/D-perp grid dataset")
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("plant-host", parents=[common], help="plant the pattern into host graphs")
    p.add_argument("--hosts", help="JSONL file of host graphs (default: random grids)")
    p.add_argument("--count", type=int, default=50, help="number of random hosts when --hosts is absent")
    p.add_argument("--modes", default="full,partial,scattered")
    p.set_defaults(func=cmd_plant_host)

    p = sub.add_parser("verify", parents=[common], help="re-check partition membership of a dataset")
    p.add_argument("data", help="dataset directory")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", help="dataset directory (default: synthesize from the config)")
    p.add_argument("--pooling", choices=[x.value for x in Pooling], default="attn")
    p.add_argument("--no-classifier", action="store_true")
    p.add_argument("--log-every", type=int, default=36)
    p.set_defaults(func=cmd_train)

    for name, doc in (("probe", "label D-perp with models trained on D1 and D0"),
                      ("generalize", "test accuracy on unseen grids of two sizes"),
                      ("sweep-beta", "attention temperature sweep"),
                      ("ablate-linear", "with and without the linear classifier")):
        p = sub.add_parser(name, parents=[common], help=doc)
        p.set_defaults(func=lambda a, n=name: _run_experiment(n, a))

    p = sub.add_parser("search", parents=[common], help="exhaustive discriminative-subgraph search")
    p.add_argument("data", help="dataset directory")
    p.add_argument("-k", type=int, default=3)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("grad-check", parents=[common], help="autodiff vs finite differences")
    p.add_argument("--graphs", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("trace-alignment", parents=[common], help="theory-mode training with alignment monitors")
    p.add_argument("--data", help="dataset directory (default: synthesize from the config)")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=300)
    p.set_defaults(func=cmd_trace_alignment)

    p = sub.add_parser("report", parents=[common], help="re-emit a saved JSON report")
    p.add_argument("report", help="report JSON file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, InvalidArgument, SynthesisError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
