"""Teacher/student self-training loop, selection strategies, sweeps and reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibration as cal
from .banzhaf import (SAMPLING_MODES, exhaustive_banzhaf, individual_gains, msr_banzhaf, select_candidates,
                      top_k_select)
from .gcn import TrainConfig, fit, forward
from .graph import Graph, LabelState, Split, flip_labels, load_dataset, normalize, subsample_train
from .objective import SubsetUtility
from .propagation import PprConfig, build_state

log = logging.getLogger(__name__)

STRATEGIES = ("bangs", "bangs_uncal", "bangs_no_banzhaf", "conf_cal", "conf_uncal", "random", "raw")
CALIBRATED = frozenset({"bangs", "bangs_no_banzhaf", "conf_cal"})
ROUND_COLUMNS = ("round", "n_selected", "pseudo_acc", "val_acc", "test_acc", "objective", "wall_time_s")
SWEEP_AXES = ("k", "K", "sigma", "beta")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    strategy: str = "bangs"
    rounds: int = 40
    select_k: int = 100
    pool_K: int = 200
    banzhaf_samples: int = 500
    banzhaf_mode: str = "msr"
    sampling: str = "coalition_uniform"
    calibration: str = "ets"
    ppr: PprConfig = field(default_factory=PprConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    noise_sigma: float = 0.0
    train_fraction_beta: float = 1.0
    early_stop: bool = False
    round_patience: int = 10
    exclude_selected_from_objective: bool = False
    row_normalize_features: bool = True
    n_workers: int = 1
    record_wall_time: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.select_k < 0 or self.select_k > self.pool_K:
            raise ConfigError(f"need 0 <= select_k <= pool_K (got {self.select_k}, {self.pool_K})")
        if self.banzhaf_samples < 1:
            raise ConfigError("banzhaf_samples must be >= 1")
        if self.banzhaf_mode not in ("msr", "exhaustive"):
            raise ConfigError(f"unknown banzhaf_mode {self.banzhaf_mode!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.calibration not in ("none", "ts", "ets"):
            raise ConfigError(f"unknown calibration {self.calibration!r}")
        if not 0.0 <= self.noise_sigma <= 1.0:
            raise ConfigError("noise_sigma must be in [0, 1]")
        if not 0.0 < self.train_fraction_beta <= 1.0:
            raise ConfigError("train_fraction_beta must be in (0, 1]")

    # flat aliases accepted in config files next to the nested "ppr"/"train" objects
    _ALIASES = {
        "pool_size_K": "pool_K", "alpha": ("ppr", "alpha"), "ppr_steps": ("ppr", "steps"),
        "ppr_tol": ("ppr", "tol"), "exact_ppr": ("ppr", "exact"),
        "delta_memory_cap_mb": ("ppr", "delta_memory_cap_mb"),
        "learning_rate": ("train", "learning_rate"), "weight_decay": ("train", "weight_decay"),
        "max_epochs": ("train", "max_epochs"), "patience": ("train", "patience"),
        "hidden_dim": ("train", "hidden_dim"), "dropout_rate": ("train", "dropout_rate"),
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        nested = {"ppr": dict(data.pop("ppr", {}) or {}), "train": dict(data.pop("train", {}) or {})}
        top = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            target = cls._ALIASES.get(key, key)
            if isinstance(target, tuple):
                nested[target[0]][target[1]] = value
            elif target in names:
                top[target] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            ppr = PprConfig(**nested["ppr"])
            train = TrainConfig(**nested["train"])
            return cls(ppr=ppr, train=train, **top)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RoundRecord:
    round: int
    n_selected: int
    pseudo_acc: float
    val_acc: float
    test_acc: float
    objective: float
    wall_time_s: float

    def row(self) -> list[str]:
        return [str(self.round), str(self.n_selected)] + [repr(float(v)) for v in
                                                          (self.pseudo_acc, self.val_acc, self.test_acc,
                                                           self.objective, self.wall_time_s)]


@dataclass
class RunReport:
    strategy: str
    seed: int
    records: list[RoundRecord]
    exhausted: bool = False
    pseudo: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def best_round(self) -> RoundRecord:
        return max(self.records, key=lambda r: (r.test_acc, -r.round))

    @property
    def early_stop_round(self) -> RoundRecord:
        return max(self.records, key=lambda r: (r.val_acc, -r.round))

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "rounds_run": self.records[-1].round,
            "best_test_acc": self.best_round.test_acc,
            "best_round": self.best_round.round,
            "early_stop_test_acc": self.early_stop_round.test_acc,
            "early_stop_round": self.early_stop_round.round,
            "exhausted": self.exhausted,
        }


def derive_seed(*parts: int) -> int:
    """Deterministic 32-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class _Data:
    graph: Graph
    split: Split
    features: np.ndarray
    train_labels: np.ndarray  # labels the method may see (possibly noisy)
    adj_sym: object
    adj_row: object


_DATA_CACHE: dict[str, tuple[Graph, Split]] = {}


def _load(path: str) -> tuple[Graph, Split]:
    if path not in _DATA_CACHE:
        _DATA_CACHE[path] = load_dataset(path, symmetrize=True)
    return _DATA_CACHE[path]


def prepare(config: RunConfig, seed: int, data: tuple[Graph, Split] | None = None) -> _Data:
    graph, split = data if data is not None else _load(config.dataset)
    if config.train_fraction_beta < 1.0:
        split = subsample_train(split, config.train_fraction_beta, derive_seed(seed, 1_000_001))
    labels = np.asarray(graph.labels)
    if config.noise_sigma > 0:
        pool = np.concatenate([split.train_ids, split.val_ids])
        labels = flip_labels(labels, pool, config.noise_sigma, derive_seed(seed, 1_000_002), graph.n_classes)
    X = graph.features
    if config.row_normalize_features:
        s = X.sum(axis=1, keepdims=True)
        X = np.divide(X, s, out=np.zeros_like(X), where=s != 0)
    return _Data(graph, split, X, labels, normalize(graph, "symmetric", True), normalize(graph, "row", True))


@dataclass
class Selection:
    pairs: list[tuple[int, int]]
    objective: float = math.nan


def _top_confident(probs: np.ndarray, state: LabelState, k: int) -> list[tuple[int, int]]:
    pool = select_candidates(probs, state, k)
    return [(int(v), int(lab)) for v, lab in zip(pool.nodes, pool.pseudo_labels)]


def _objective_of(pairs, prop_logits, state: LabelState, d: _Data, config: RunConfig) -> float:
    nodes = [v for v, _ in pairs]
    st = build_state(d.adj_row, prop_logits, state.anchored(), nodes, config.ppr)
    return SubsetUtility(st, state.unlabeled_array(), config.exclude_selected_from_objective)(nodes)


def select_for_strategy(strategy: str, logits: np.ndarray, probs: np.ndarray, prop_logits: np.ndarray,
                        state: LabelState, config: RunConfig, d: _Data, rng_seed: int) -> Selection:
    """Pick this round's ``(node, pseudo_label)`` pairs.

    ``probs`` are the (possibly calibrated) class probabilities; pseudo-labels
    are their argmax. ``prop_logits`` are the logits propagated by the
    utility (log of the calibrated probabilities when calibrating).
    """
    unl = state.unlabeled_array()
    if len(unl) == 0:
        raise ValueError("no unlabeled nodes left")
    k = min(config.select_k, len(unl))

    if strategy == "random":
        rng = np.random.default_rng(rng_seed)
        nodes = np.sort(rng.choice(unl, size=k, replace=False))
        return Selection([(int(v), int(probs[v].argmax())) for v in nodes])
    if strategy in ("conf_cal", "conf_uncal"):
        return Selection(_top_confident(probs, state, k))

    if strategy == "bangs_no_banzhaf":
        pool = select_candidates(probs, state, min(config.select_k + 100, len(unl)), prop_logits)
    else:
        pool = select_candidates(probs, state, min(config.pool_K, len(unl)), prop_logits)
    st = build_state(d.adj_row, prop_logits, state.anchored(), pool.nodes, config.ppr)
    U = SubsetUtility(st, unl, config.exclude_selected_from_objective)

    if k >= len(pool):
        pairs = top_k_select(np.zeros(len(pool)), pool, len(pool))
    elif strategy == "bangs_no_banzhaf":
        pairs = top_k_select(individual_gains(pool, U), pool, k)
    elif config.banzhaf_mode == "exhaustive":
        pairs = top_k_select(exhaustive_banzhaf(pool, U, k), pool, k)
    else:
        est = msr_banzhaf(pool, U, k, config.banzhaf_samples, rng_seed, config.sampling, config.n_workers)
        pairs = top_k_select(est, pool, k)
    return Selection(pairs, U([v for v, _ in pairs]))


def run(config: RunConfig, seed: int | None = None, data: tuple[Graph, Split] | None = None) -> RunReport:
    """One self-training run for one seed."""
    seed = config.seeds[0] if seed is None else seed
    d = prepare(config, seed, data)
    g, split = d.graph, d.split
    truth = g.labels
    val_pairs = [(int(v), int(d.train_labels[v])) for v in split.val_ids]
    state = LabelState.initial(d.train_labels, split.train_ids, split.eligible_pool(g.n_nodes))

    def train_student(r: int):
        tc = dataclasses.replace(config.train, seed=derive_seed(seed, r))
        model, _ = fit(d.adj_sym, d.features, g.n_classes, state.training_pairs(), val_pairs, tc)
        return model, forward(model, d.adj_sym, d.features)

    def evaluate(r, n_sel, logits, obj, t0) -> RoundRecord:
        pred = logits.argmax(axis=1)
        pseudo = state.pseudo
        pacc = float(np.mean([truth[v] == lab for v, lab, _ in pseudo])) if pseudo else math.nan
        wall = time.perf_counter() - t0 if config.record_wall_time else 0.0
        return RoundRecord(r, n_sel, pacc, float(np.mean(pred[split.val_ids] == d.train_labels[split.val_ids])),
                           float(np.mean(pred[split.test_ids] == truth[split.test_ids])), obj, wall)

    t0 = time.perf_counter()
    _, logits = train_student(0)
    records = [evaluate(0, 0, logits, math.nan, t0)]
    report = RunReport(config.strategy, seed, records)
    if config.strategy == "raw" or config.select_k == 0:
        return report

    best_val, since_best = records[0].val_acc, 0
    for r in range(1, config.rounds + 1):
        t0 = time.perf_counter()
        if not state.unlabeled:
            report.exhausted = True
            log.info("seed %d: unlabeled pool exhausted before round %d", seed, r)
            break
        calibrator = None
        if config.strategy in CALIBRATED and config.calibration != "none":
            calibrator = cal.fit_calibrator(config.calibration, logits[split.val_ids],
                                            d.train_labels[split.val_ids])
        probs = cal.apply(calibrator, logits)
        prop_logits = np.log(np.clip(probs, 1e-300, None)) if calibrator is not None else logits
        sel = select_for_strategy(config.strategy, logits, probs, prop_logits, state, config, d,
                                  derive_seed(seed, r, 7))
        if math.isnan(sel.objective) and sel.pairs:
            sel.objective = _objective_of(sel.pairs, prop_logits, state, d, config)
        state.add_pseudo([v for v, _ in sel.pairs], [lab for _, lab in sel.pairs], r)
        _, logits = train_student(r)
        records.append(evaluate(r, len(sel.pairs), logits, sel.objective, t0))
        log.debug("seed %d round %d: val %.4f test %.4f", seed, r, records[-1].val_acc, records[-1].test_acc)

        if records[-1].val_acc > best_val:
            best_val, since_best = records[-1].val_acc, 0
        else:
            since_best += 1
        if config.early_stop and since_best >= config.round_patience:
            break
    if not state.unlabeled and len(records) - 1 < config.rounds:
        report.exhausted = True
    report.pseudo = list(state.pseudo)
    return report


def _run_task(args):
    config, seed, data = args
    return run(config, seed, data)


def run_seeds(config: RunConfig, data=None, jobs: int = 1) -> list[RunReport]:
    tasks = [(config, s, data) for s in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_task, tasks))
    return [_run_task(t) for t in tasks]


def mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()) if len(v) else math.nan,
            "std": float(v.std(ddof=1)) if len(v) > 1 else math.nan,
            "values": v.tolist()}


def aggregate(reports: list[RunReport]) -> dict:
    out: dict = {}
    for strat in dict.fromkeys(r.strategy for r in reports):
        rs = [r for r in reports if r.strategy == strat]
        out[strat] = {
            "seeds": [r.seed for r in rs],
            "best_test_acc": mean_std([r.best_round.test_acc for r in rs]),
            "early_stop_test_acc": mean_std([r.early_stop_round.test_acc for r in rs]),
            "exhausted": [r.exhausted for r in rs],
        }
    return out


def write_rounds(records: list[RoundRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for rec in records:
            w.writerow(rec.row())
    return path


def emit_report(reports: list[RunReport], path) -> Path:
    """``<strategy>/seed_<s>/rounds.csv`` per run plus a top-level ``summary.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        write_rounds(rep.records, root / rep.strategy / f"seed_{rep.seed}" / "rounds.csv")
    summary = {"strategies": aggregate(reports), "runs": [r.summary() for r in reports]}
    (root / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return root


def _sweep_cell(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "k":
        k = int(value)
        if k == 0:
            return config.replace(strategy="raw", select_k=0)
        return config.replace(select_k=k, pool_K=2 * k if k < 100 else k + 100)
    if axis == "K":
        return config.replace(pool_K=int(value))
    if axis == "sigma":
        return config.replace(noise_sigma=float(value))
    if axis == "beta":
        return config.replace(train_fraction_beta=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


SWEEP_LONG_COLUMNS = ("axis", "value", "strategy", "seed", "best_test_acc", "early_stop_test_acc", "status")
SWEEP_SUMMARY_COLUMNS = ("axis", "value", "strategy", "n", "best_mean", "best_std", "early_stop_mean",
                         "early_stop_std")


def sweep(config: RunConfig, axis: str, values, data=None, out=None) -> list[dict]:
    """One run per (value, seed); failing cells are recorded and skipped."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    rows = []

    def failed(value, strategy, seed, exc):
        log.error("sweep cell %s=%s seed %d failed: %s", axis, value, seed, exc)
        rows.append({"axis": axis, "value": value, "strategy": strategy, "seed": seed,
                     "best_test_acc": math.nan, "early_stop_test_acc": math.nan, "status": f"error: {exc}"})

    for value in values:
        try:
            cell = _sweep_cell(config, axis, value)
        except ConfigError as exc:
            for seed in config.seeds:
                failed(value, config.strategy, seed, exc)
            continue
        for seed in cell.seeds:
            try:
                s = run(cell, seed, data).summary()
            except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the sweep
                failed(value, cell.strategy, seed, exc)
                continue
            rows.append({"axis": axis, "value": value, "strategy": cell.strategy, "seed": seed,
                         "best_test_acc": s["best_test_acc"],
                         "early_stop_test_acc": s["early_stop_test_acc"], "status": "ok"})
    if out is not None:
        write_sweep(rows, out)
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    out = []
    keys = list(dict.fromkeys((r["axis"], r["value"], r["strategy"]) for r in rows))
    for axis, value, strat in keys:
        ok = [r for r in rows if (r["axis"], r["value"], r["strategy"]) == (axis, value, strat)
              and r["status"] == "ok"]
        b = mean_std([r["best_test_acc"] for r in ok])
        e = mean_std([r["early_stop_test_acc"] for r in ok])
        out.append({"axis": axis, "value": value, "strategy": strat, "n": len(ok),
                    "best_mean": b["mean"], "best_std": b["std"],
                    "early_stop_mean": e["mean"], "early_stop_std": e["std"]})
    return out


def write_sweep(rows: list[dict], out) -> Path:
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    for name, cols, data in (("sweep_long.csv", SWEEP_LONG_COLUMNS, rows),
                             ("sweep_summary.csv", SWEEP_SUMMARY_COLUMNS, summarize_sweep(rows))):
        with open(root / name, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            w.writerows(data)
    return root
