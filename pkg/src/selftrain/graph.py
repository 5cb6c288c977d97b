"""Graph storage: CSR graphs, splits, label bookkeeping and the GraphPack format.

A GraphPack directory holds::

    manifest.json   {"n_nodes", "n_features", "n_classes", "feature_file",
                     "edge_file", "label_file", "split_file"}
    edges.txt       "u v" per line
    features.bin    row-major float32 little-endian, n_nodes x n_features
    labels.txt      one integer per line
    split.json      {"train": [...], "val": [...], "test": [...]}
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised when a dataset on disk or in memory violates the graph invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR layout with dense node features and labels.

    ``n_edges`` counts undirected edges; ``csr_targets`` lists each one twice.
    """

    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "csr_offsets", _frozen(np.asarray(self.csr_offsets, dtype=np.int64)))
        object.__setattr__(self, "csr_targets", _frozen(np.asarray(self.csr_targets, dtype=np.int64)))
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.csr_offsets) - 1

    @property
    def n_edges(self) -> int:
        return len(self.csr_targets) // 2

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency as a scipy CSR matrix (no self-loops added)."""
        n = self.n_nodes
        data = np.ones(len(self.csr_targets))
        return sp.csr_matrix((data, self.csr_targets, self.csr_offsets), shape=(n, n))

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def validate(self) -> None:
        n = self.n_nodes
        off, tgt = self.csr_offsets, self.csr_targets
        if n < 1:
            raise GraphFormatError("graph has no nodes")
        if off[0] != 0 or np.any(np.diff(off) < 0) or off[-1] != len(tgt):
            raise GraphFormatError("csr_offsets must be non-decreasing from 0 to len(csr_targets)")
        if len(tgt) and (tgt.min() < 0 or tgt.max() >= n):
            raise GraphFormatError("csr_targets contains ids outside [0, n_nodes)")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphFormatError(f"features must have shape ({n}, D), got {self.features.shape}")
        if self.labels.shape != (n,):
            raise GraphFormatError(f"expected {n} labels, got {self.labels.shape[0]}")
        if not np.all(np.isfinite(self.features)):
            raise GraphFormatError("features contain non-finite values")
        if self.n_classes < 1:
            raise GraphFormatError("n_classes must be positive")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.n_classes))
        if len(bad):
            raise GraphFormatError(
                f"label {self.labels[bad[0]]} of node {bad[0]} outside [0, {self.n_classes})"
            )
        a = self.adjacency()
        asym = a - a.T
        asym.eliminate_zeros()
        if asym.nnz:
            r, c = asym.nonzero()
            u, v = (int(r[0]), int(c[0])) if asym[r[0], c[0]] > 0 else (int(c[0]), int(r[0]))
            raise GraphFormatError(f"adjacency not symmetric: edge ({u}, {v}) has no reverse ({v}, {u})")

    @classmethod
    def from_edges(cls, n_nodes: int, edges, features, labels, n_classes: int | None = None,
                   symmetrize: bool = True) -> "Graph":
        """Build a graph from an edge array of shape (E, 2).

        Duplicates and self-loops are dropped. With ``symmetrize=False`` a
        missing reverse edge is an error naming the offending pair.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
            bad = edges[(edges < 0).any(1) | (edges >= n_nodes).any(1)][0]
            raise GraphFormatError(f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {n_nodes})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        a = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_nodes, n_nodes))
        a.data[:] = 1.0
        if symmetrize:
            a = a.maximum(a.T)
        else:
            asym = (a - a.T).tocoo()
            asym.eliminate_zeros()
            if asym.nnz:
                i = int(np.argmax(asym.data > 0))
                u, v = int(asym.row[i]), int(asym.col[i])
                raise GraphFormatError(f"edge list not symmetric: ({u}, {v}) present but ({v}, {u}) missing")
        a = a.tocsr()
        a.sort_indices()
        labels = np.asarray(labels, dtype=np.int64)
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        return cls(a.indptr, a.indices, features, labels, n_classes)


@dataclass(frozen=True, eq=False)
class Split:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))

    def validate(self, n_nodes: int) -> None:
        parts = {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}
        for name, ids in parts.items():
            if len(ids) == 0:
                raise GraphFormatError(f"{name} split is empty")
            if ids.min() < 0 or ids.max() >= n_nodes:
                raise GraphFormatError(f"{name} split has ids outside [0, {n_nodes})")
            if len(np.unique(ids)) != len(ids):
                raise GraphFormatError(f"{name} split has duplicate ids")
        names = list(parts)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                common = np.intersect1d(parts[a], parts[b])
                if len(common):
                    raise GraphFormatError(f"{a} and {b} splits overlap at node {common[0]}")

    def eligible_pool(self, n_nodes: int) -> np.ndarray:
        """Nodes outside train, val and test: the pseudo-label pool."""
        mask = np.ones(n_nodes, dtype=bool)
        mask[self.train_ids] = False
        mask[self.val_ids] = False
        mask[self.test_ids] = False
        return np.flatnonzero(mask)

    def to_json(self) -> dict:
        return {"train": self.train_ids.tolist(), "val": self.val_ids.tolist(), "test": self.test_ids.tolist()}


@dataclass
class LabelState:
    """Partition of the train-eligible nodes into labeled, pseudo-labeled and unlabeled.

    ``pseudo`` holds ``(node, pseudo_label, round_assigned)`` in assignment order.
    """

    labeled: dict[int, int]
    unlabeled: set[int]
    pseudo: list[tuple[int, int, int]] = field(default_factory=list)
    current_round: int = 0

    @classmethod
    def initial(cls, labels: np.ndarray, train_ids: Iterable[int], pool: Iterable[int]) -> "LabelState":
        labeled = {int(i): int(labels[i]) for i in train_ids}
        unlabeled = {int(i) for i in pool}
        if unlabeled & labeled.keys():
            raise ValueError("pseudo-label pool overlaps the labeled set")
        return cls(labeled=labeled, unlabeled=unlabeled)

    @property
    def pseudo_nodes(self) -> list[int]:
        return [p[0] for p in self.pseudo]

    def anchored(self) -> np.ndarray:
        """Labeled and pseudo-labeled node ids, sorted."""
        return np.array(sorted(list(self.labeled) + self.pseudo_nodes), dtype=np.int64)

    def unlabeled_array(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled), dtype=np.int64)

    def training_pairs(self) -> list[tuple[int, int]]:
        pairs = sorted(self.labeled.items())
        pairs += [(node, lab) for node, lab, _ in self.pseudo]
        return pairs

    def add_pseudo(self, nodes, labels, round_assigned: int) -> None:
        if round_assigned <= 0:
            raise ValueError("round_assigned must be positive")
        if round_assigned < self.current_round:
            raise ValueError("rounds must not go backwards")
        nodes = [int(v) for v in nodes]
        missing = [v for v in nodes if v not in self.unlabeled]
        if missing:
            raise ValueError(f"node {missing[0]} is not unlabeled")
        if len(set(nodes)) != len(nodes):
            raise ValueError("duplicate nodes in pseudo-label batch")
        self.current_round = round_assigned
        for v, lab in zip(nodes, labels):
            self.unlabeled.remove(v)
            self.pseudo.append((v, int(lab), round_assigned))

    def check(self) -> None:
        pseudo = set(self.pseudo_nodes)
        if len(pseudo) != len(self.pseudo):
            raise AssertionError("pseudo-labeled node appears twice")
        if pseudo & self.unlabeled or pseudo & self.labeled.keys() or self.unlabeled & self.labeled.keys():
            raise AssertionError("label state sets overlap")
        if any(r <= 0 or r > self.current_round for _, _, r in self.pseudo):
            raise AssertionError("round_assigned outside (0, current_round]")


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    weights: np.ndarray
    mode: str
    self_loops: bool

    def __post_init__(self):
        object.__setattr__(self, "csr_offsets", _frozen(self.csr_offsets))
        object.__setattr__(self, "csr_targets", _frozen(self.csr_targets))
        object.__setattr__(self, "weights", _frozen(self.weights))

    @property
    def n_nodes(self) -> int:
        return len(self.csr_offsets) - 1

    @property
    def matrix(self) -> sp.csr_matrix:
        n = self.n_nodes
        # scipy may not copy; hand it writable copies so the frozen arrays stay frozen
        return sp.csr_matrix((self.weights.copy(), self.csr_targets.copy(), self.csr_offsets.copy()),
                             shape=(n, n))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def normalize(graph: Graph, mode: str = "row", self_loops: bool = True) -> NormalizedAdjacency:
    """Normalize the adjacency: ``row`` gives D^-1 (A+I), ``symmetric`` gives D^-1/2 (A+I) D^-1/2."""
    if mode not in ("row", "symmetric"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    a = graph.adjacency()
    if self_loops:
        a = a + sp.identity(graph.n_nodes, format="csr")
    a = a.tocsr()
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    if mode == "row":
        zero = np.flatnonzero(deg == 0)
        if len(zero):
            raise GraphFormatError(f"node {zero[0]} is isolated; row normalization without self-loops divides by zero")
        a = sp.diags(1.0 / deg) @ a
    else:
        with np.errstate(divide="ignore"):
            inv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
        d = sp.diags(inv)
        a = d @ a @ d
    a = a.tocsr()
    a.sort_indices()
    return NormalizedAdjacency(a.indptr.astype(np.int64), a.indices.astype(np.int64),
                               a.data.astype(np.float64), mode, self_loops)


def flip_labels(labels, node_pool, sigma: float, rng_seed: int, n_classes: int | None = None) -> np.ndarray:
    """Flip ``floor(sigma * |pool|)`` labels, each to a uniformly drawn different class."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    labels = np.array(labels, dtype=np.int64, copy=True)
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    if c < 2:
        raise ValueError("label flipping needs at least two classes")
    pool = np.asarray(sorted(int(v) for v in node_pool), dtype=np.int64)
    n_flip = math.floor(sigma * len(pool))
    if n_flip == 0:
        return labels
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(pool, size=n_flip, replace=False)
    offset = rng.integers(1, c, size=n_flip)
    labels[chosen] = (labels[chosen] + offset) % c
    return labels


def subsample_train(split: Split, beta: float, rng_seed: int) -> Split:
    """Keep a uniform ``ceil(beta * |train|)`` subset of the training nodes."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    n_keep = math.ceil(beta * len(split.train_ids))
    if n_keep == 0:
        raise ValueError("subsampled training set is empty")
    if n_keep == len(split.train_ids):
        return split
    rng = np.random.default_rng(rng_seed)
    keep = np.sort(rng.choice(split.train_ids, size=n_keep, replace=False))
    return Split(keep, split.val_ids, split.test_ids)


# -- GraphPack I/O -----------------------------------------------------------

MANIFEST_KEYS = ("n_nodes", "n_features", "n_classes", "feature_file", "edge_file", "label_file", "split_file")


def load_dataset(path, manifest: str = "manifest.json", symmetrize: bool = False) -> tuple[Graph, Split]:
    """Load and validate a GraphPack directory.

    Edges may be listed in one or both directions only when ``symmetrize`` is
    set; otherwise every edge must appear with its reverse.
    """
    root = Path(path)
    mpath = root / manifest
    if not mpath.is_file():
        raise FileNotFoundError(f"missing manifest {mpath}")
    meta = json.loads(mpath.read_text())
    missing = [k for k in MANIFEST_KEYS if k not in meta]
    if missing:
        raise GraphFormatError(f"manifest lacks keys {missing}")
    n, d, c = int(meta["n_nodes"]), int(meta["n_features"]), int(meta["n_classes"])
    files = {k: root / meta[k] for k in ("feature_file", "edge_file", "label_file", "split_file")}
    for f in files.values():
        if not f.is_file():
            raise FileNotFoundError(f"missing file {f}")

    raw = np.fromfile(files["feature_file"], dtype="<f4")
    if raw.size != n * d:
        raise GraphFormatError(f"features.bin holds {raw.size} floats, expected {n} x {d} = {n * d}")
    features = raw.reshape(n, d).astype(np.float64)

    labels = np.loadtxt(files["label_file"], dtype=np.int64, ndmin=1)
    if labels.shape[0] != n:
        raise GraphFormatError(f"label file has {labels.shape[0]} lines, expected {n}")

    text = files["edge_file"].read_text().split()
    if len(text) % 2:
        raise GraphFormatError("edge file has an odd number of ids")
    edges = np.array(text, dtype=np.int64).reshape(-1, 2)

    graph = Graph.from_edges(n, edges, features, labels, c, symmetrize=symmetrize)
    sj = json.loads(files["split_file"].read_text())
    split = Split(sj["train"], sj["val"], sj["test"])
    split.validate(n)
    return graph, split


def save_dataset(graph: Graph, split: Split, path) -> Path:
    """Write a GraphPack; edges are written in both directions."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_nodes": graph.n_nodes,
        "n_features": graph.n_features,
        "n_classes": graph.n_classes,
        "feature_file": "features.bin",
        "edge_file": "edges.txt",
        "label_file": "labels.txt",
        "split_file": "split.json",
    }
    (root / "manifest.json").write_text(json.dumps(meta, indent=2) + "\n")
    graph.features.astype("<f4").tofile(root / "features.bin")
    np.savetxt(root / "labels.txt", graph.labels, fmt="%d")
    src = np.repeat(np.arange(graph.n_nodes), np.diff(graph.csr_offsets))
    with open(root / "edges.txt", "w") as fh:
        for u, v in zip(src.tolist(), graph.csr_targets.tolist()):
            fh.write(f"{u} {v}\n")
    (root / "split.json").write_text(json.dumps(split.to_json()) + "\n")
    return root
