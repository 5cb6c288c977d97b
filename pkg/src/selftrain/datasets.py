"""Dataset converters and a synthetic citation-graph generator.

``read_planetoid`` turns the raw ``ind.<name>.*`` files of the Planetoid
benchmark (Cora, CiteSeer, PubMed) into a :class:`Graph` plus the official
split: the first ``len(y)`` nodes train, the next ``n_val`` (500) validate, and the
``test.index`` nodes test.
"""
from __future__ import annotations

import csv
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, GraphFormatError, Split

CORA_CLASS_SIZES = (351, 217, 418, 818, 426, 298, 180)


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        if sys.version_info > (3, 0):
            return pickle.load(fh, encoding="latin1")
        return pickle.load(fh)


def read_planetoid(raw_dir, name: str, n_val: int = 500) -> tuple[Graph, Split]:
    raw = Path(raw_dir)
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        f = raw / f"ind.{name.lower()}.{key}"
        if not f.is_file():
            raise FileNotFoundError(f"missing Planetoid file {f}")
        parts[key] = _load_pickle(f)
    test_index = np.loadtxt(raw / f"ind.{name.lower()}.test.index", dtype=np.int64, ndmin=1)
    test_sorted = np.sort(test_index)

    def dense(m):
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    tx, ty = dense(parts["tx"]), np.asarray(parts["ty"])
    if name.lower() == "citeseer":
        # isolated test nodes are missing from tx/ty; pad them with zeros
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = np.zeros((len(full), tx.shape[1]))
        ty_ext = np.zeros((len(full), ty.shape[1]))
        tx_ext[test_sorted - test_sorted.min()] = tx
        ty_ext[test_sorted - test_sorted.min()] = ty
        tx, ty = tx_ext, ty_ext

    x = np.vstack([dense(parts["allx"]), tx])
    y = np.vstack([np.asarray(parts["ally"]), ty])
    # tx rows arrive in test.index order; put them at their sorted positions
    x[test_index] = x[test_sorted]
    y[test_index] = y[test_sorted]
    labels = y.argmax(axis=1)

    n = x.shape[0]
    n_train = np.asarray(parts["y"]).shape[0]
    train = np.arange(n_train)
    val = np.arange(n_train, n_train + n_val)

    edges = [(int(u), int(v)) for u, nbrs in parts["graph"].items() for v in nbrs]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[(edges < n).all(axis=1)]
    graph = Graph.from_edges(n, edges, x, labels, y.shape[1], symmetrize=True)
    split = Split(train, val, test_sorted)
    split.validate(n)
    return graph, split


def read_edge_list(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 2:
                raise GraphFormatError(f"bad edge line {line!r}")
            rows.append((int(parts[0]), int(parts[1])))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def read_feature_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]  # header line
    return np.asarray(rows, dtype=np.float64)


def convert(edges_path, features_path, labels_path, split_path) -> tuple[Graph, Split]:
    """Edge list + CSV features + label lines + split JSON, symmetrized and validated."""
    features = read_feature_csv(features_path)
    labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    if len(labels) != features.shape[0]:
        raise GraphFormatError(f"{len(labels)} labels for {features.shape[0]} feature rows")
    graph = Graph.from_edges(features.shape[0], read_edge_list(edges_path), features, labels, symmetrize=True)
    sj = json.loads(Path(split_path).read_text())
    split = Split(sj["train"], sj["val"], sj["test"])
    split.validate(graph.n_nodes)
    return graph, split


def make_citation_graph(seed: int = 0, class_sizes=CORA_CLASS_SIZES, n_edges: int = 5278,
                        n_features: int = 1433, homophily: float = 0.78, words_per_node: float = 18.0,
                        topic_share: float = 0.2, topic_words: int = 120,
                        train_per_class: int = 20, n_val: int = 500, n_test: int = 1000) -> tuple[Graph, Split]:
    """Degree-corrected SBM with bag-of-words features, sized like Cora by default.

    Each class owns ``topic_words`` vocabulary entries; a node draws about
    ``words_per_node`` words, a ``topic_share`` fraction of them from its
    class topic and the rest from the whole vocabulary. The split follows the
    Planetoid convention (per-class train nodes, then val, then test) and
    leaves the remaining nodes unassigned.
    """
    C = len(class_sizes)
    if C * topic_words > n_features:
        raise ValueError(f"{C} topics of {topic_words} words do not fit in {n_features} features")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(C), class_sizes))
    n = len(labels)

    theta = rng.pareto(2.5, size=n) + 1.0
    members = [np.flatnonzero(labels == c) for c in range(C)]
    probs = [theta[m] / theta[m].sum() for m in members]
    p_all = theta / theta.sum()

    edge_set: set[tuple[int, int]] = set()
    while len(edge_set) < n_edges:
        batch = n_edges - len(edge_set)
        src = rng.choice(n, size=batch, p=p_all)
        same = rng.random(batch) < homophily
        for u, s in zip(src, same):
            c = labels[u]
            if s:
                v = rng.choice(members[c], p=probs[c])
            else:
                other = rng.integers(0, C - 1)
                other += other >= c
                v = rng.choice(members[other], p=probs[other])
            if u != v:
                edge_set.add((min(u, v), max(u, v)))
    # attach isolated nodes to one same-class neighbour so every node has degree >= 1
    edges = np.asarray(sorted(edge_set), dtype=np.int64)
    deg = np.bincount(edges.ravel(), minlength=n)
    extra = []
    for u in np.flatnonzero(deg == 0):
        v = rng.choice(members[labels[u]])
        if v != u:
            extra.append((u, v))
    if extra:
        edges = np.vstack([edges, np.asarray(extra, dtype=np.int64)])

    vocab = rng.permutation(n_features)
    topics = [vocab[c * topic_words:(c + 1) * topic_words] for c in range(C)]
    X = np.zeros((n, n_features))
    counts = np.maximum(1, rng.poisson(words_per_node, size=n))
    for u in range(n):
        k_topic = rng.binomial(counts[u], topic_share)
        words = np.concatenate([rng.choice(topics[labels[u]], size=k_topic),
                                rng.integers(0, n_features, size=counts[u] - k_topic)])
        X[u, words] = 1.0

    graph = Graph.from_edges(n, edges, X, labels, C, symmetrize=True)
    order = rng.permutation(n)
    train = np.concatenate([order[labels[order] == c][:train_per_class] for c in range(C)])
    rest = order[~np.isin(order, train)]
    split = Split(np.sort(train), np.sort(rest[:n_val]), np.sort(rest[-n_test:]))
    split.validate(n)
    return graph, split
