import json
import pickle
from collections import defaultdict

import numpy as np
import pytest
import scipy.sparse as sp

from selftrain.datasets import (CORA_CLASS_SIZES, convert, make_citation_graph, read_edge_list, read_planetoid)
from selftrain.graph import GraphFormatError, normalize


def fake_planetoid(root, name="cora", n=12, n_train=3, D=4, C=3, seed=0):
    """Planetoid-layout pickles for an n-node graph whose last 4 nodes are the (shuffled) test set."""
    rng = np.random.default_rng(seed)
    feats = rng.random((n, D))
    labels = rng.integers(0, C, size=n)
    onehot = np.eye(C)[labels]
    test_index = np.array([n - 1, n - 3, n - 4, n - 2])  # file order, not sorted
    n_all = n - 4
    parts = {
        "x": sp.csr_matrix(feats[:n_train]), "y": onehot[:n_train],
        "allx": sp.csr_matrix(feats[:n_all]), "ally": onehot[:n_all],
        "tx": sp.csr_matrix(feats[test_index]), "ty": onehot[test_index],
    }
    graph = defaultdict(list)
    for u in range(n - 1):
        graph[u].append(u + 1)
        graph[u + 1].append(u)
    parts["graph"] = graph
    for key, obj in parts.items():
        with open(root / f"ind.{name}.{key}", "wb") as fh:
            pickle.dump(obj, fh)
    np.savetxt(root / f"ind.{name}.test.index", test_index, fmt="%d")
    return feats, labels


def test_read_planetoid_reorders_test_rows(tmp_path):
    feats, labels = fake_planetoid(tmp_path)
    g, split = read_planetoid(tmp_path, "cora", n_val=3)
    np.testing.assert_allclose(g.features, feats)
    np.testing.assert_array_equal(g.labels, labels)
    assert split.train_ids.tolist() == [0, 1, 2]
    assert split.val_ids.tolist() == [3, 4, 5]
    assert split.test_ids.tolist() == [8, 9, 10, 11]
    assert g.n_edges == 11
    g.validate()


def test_read_planetoid_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_planetoid(tmp_path, "cora")


def test_convert_edge_list(tmp_path):
    (tmp_path / "e.txt").write_text("# comment\n0 1\n1,2\n")
    (tmp_path / "f.csv").write_text("a,b\n1,0\n0,1\n1,1\n")
    (tmp_path / "l.txt").write_text("0\n1\n0\n")
    (tmp_path / "s.json").write_text(json.dumps({"train": [0], "val": [1], "test": [2]}))
    g, split = convert(tmp_path / "e.txt", tmp_path / "f.csv", tmp_path / "l.txt", tmp_path / "s.json")
    assert g.n_nodes == 3 and g.n_edges == 2 and g.n_features == 2
    (tmp_path / "l.txt").write_text("0\n1\n")
    with pytest.raises(GraphFormatError):
        convert(tmp_path / "e.txt", tmp_path / "f.csv", tmp_path / "l.txt", tmp_path / "s.json")
    (tmp_path / "bad.txt").write_text("0\n")
    with pytest.raises(GraphFormatError):
        read_edge_list(tmp_path / "bad.txt")


def test_synthetic_graph_is_cora_shaped():
    g, split = make_citation_graph(seed=0)
    assert g.n_nodes == sum(CORA_CLASS_SIZES) == 2708
    assert g.n_features == 1433 and g.n_classes == 7
    assert np.bincount(g.labels).tolist() == list(CORA_CLASS_SIZES)
    assert len(split.train_ids) == 140 and len(split.val_ids) == 500 and len(split.test_ids) == 1000
    assert g.degrees().min() >= 1
    g.validate()
    normalize(g, "row", self_loops=False)
    same = g.labels[np.repeat(np.arange(g.n_nodes), g.degrees())] == g.labels[g.csr_targets]
    assert 0.7 < same.mean() < 0.9


def test_synthetic_graph_is_seeded():
    a, _ = make_citation_graph(seed=3, class_sizes=(30, 30), n_edges=100, n_features=50, topic_words=10,
                               n_val=10, n_test=10)
    b, _ = make_citation_graph(seed=3, class_sizes=(30, 30), n_edges=100, n_features=50, topic_words=10,
                               n_val=10, n_test=10)
    np.testing.assert_array_equal(a.csr_targets, b.csr_targets)
    np.testing.assert_array_equal(a.features, b.features)


def test_synthetic_graph_rejects_oversized_topics():
    with pytest.raises(ValueError, match="topics"):
        make_citation_graph(class_sizes=(30, 30), n_features=50)
