"""Command-line entry point: ``selftrain {convert,synth,train,selftrain,sweep}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .gcn import TrainingDivergence, fit, forward, save_checkpoint, write_history
from .graph import GraphFormatError, load_dataset, save_dataset
from .orchestrator import ConfigError, RunConfig, aggregate, emit_report, prepare, run_seeds, sweep

log = logging.getLogger("selftrain")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from exc


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="GraphPack directory")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--strategy")
    p.add_argument("--seeds", type=_int_list, help='e.g. "0,1,2"')
    p.add_argument("--rounds", type=int)
    p.add_argument("--select-k", type=int, dest="select_k")
    p.add_argument("--pool-k", type=int, dest="pool_K")
    p.add_argument("--samples", type=int, dest="banzhaf_samples")
    p.add_argument("--calibration", choices=("none", "ts", "ets"))
    p.add_argument("--workers", type=int, dest="n_workers", help="threads for Banzhaf sampling")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed runs")
    p.add_argument("--no-wall-time", action="store_false", dest="record_wall_time", default=None,
                   help="write 0 for wall_time_s so reports are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="edge list / CSV or Planetoid raw files -> GraphPack")
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--planetoid", metavar="RAW_DIR", help="directory with ind.<name>.* files")
    p.add_argument("--name", default="cora", help="Planetoid dataset name")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic Cora-sized citation graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the raw GCN only")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for model.ckpt and history.csv")

    p = sub.add_parser("selftrain", help="run self-training for one strategy over seeds")
    _add_run_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="one axis sweep, one run per value and seed")
    _add_run_options(p)
    p.add_argument("--axis", required=True, choices=("k", "K", "sigma", "beta"))
    p.add_argument("--values", required=True, type=_float_list)
    p.add_argument("--out", required=True)
    return parser


def _load_config(args) -> RunConfig:
    base = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    if not isinstance(base, dict):
        raise ConfigError("config file must hold a JSON object")
    base["dataset"] = args.data
    for key in ("strategy", "seeds", "rounds", "select_k", "pool_K", "banzhaf_samples", "calibration",
                "n_workers", "record_wall_time"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return RunConfig.from_dict(base)


def cmd_convert(args) -> int:
    if args.planetoid:
        graph, split = datasets.read_planetoid(args.planetoid, args.name)
    else:
        missing = [f for f in ("edges", "features", "labels", "split") if not getattr(args, f)]
        if missing:
            raise ConfigError("convert needs --planetoid or all of --edges --features --labels --split "
                              f"(missing {', '.join('--' + m for m in missing)})")
        graph, split = datasets.convert(args.edges, args.features, args.labels, args.split)
    save_dataset(graph, split, args.out)
    print(f"wrote {args.out}: {graph.n_nodes} nodes, {graph.n_edges} edges, {graph.n_classes} classes")
    return 0


def cmd_synth(args) -> int:
    graph, split = datasets.make_citation_graph(seed=args.seed)
    save_dataset(graph, split, args.out)
    print(f"wrote {args.out}: {graph.n_nodes} nodes, {graph.n_edges} edges")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args).replace(strategy="raw")
    d = prepare(cfg, args.seed, load_dataset(args.data, symmetrize=True))
    val = [(int(v), int(d.train_labels[v])) for v in d.split.val_ids]
    train_pairs = [(int(v), int(d.train_labels[v])) for v in d.split.train_ids]
    tc = dataclasses.replace(cfg.train, seed=args.seed)
    model, history = fit(d.adj_sym, d.features, d.graph.n_classes, train_pairs, val, tc)
    pred = forward(model, d.adj_sym, d.features).argmax(axis=1)
    test = d.split.test_ids
    acc = float(np.mean(pred[test] == d.graph.labels[test]))
    print(json.dumps({"seed": args.seed, "epochs": len(history), "val_acc": max(h.val_acc for h in history),
                      "test_acc": acc}))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "model.ckpt")
        write_history(history, out / "history.csv")
    return 0


def cmd_selftrain(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(args.data, symmetrize=True)
    reports = run_seeds(cfg, data, jobs=args.jobs)
    emit_report(reports, args.out)
    (Path(args.out) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(json.dumps(aggregate(reports), indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(args.data, symmetrize=True)
    values = [int(v) if args.axis in ("k", "K") else v for v in args.values]
    rows = sweep(cfg, args.axis, values, data, out=args.out)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows) - failed} cells ok, {failed} failed; wrote {args.out}")
    return 2 if failed and failed == len(rows) else 0


COMMANDS = {"convert": cmd_convert, "synth": cmd_synth, "train": cmd_train,
            "selftrain": cmd_selftrain, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GraphFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergence, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
