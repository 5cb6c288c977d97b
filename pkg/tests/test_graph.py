import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2

from conftest import random_graph
from selftrain.graph import (Graph, GraphFormatError, LabelState, Split, flip_labels, load_dataset,
                             normalize, save_dataset, subsample_train)


def write_pack(root, n, edges, labels, split, n_features=2, n_classes=2):
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps({
        "n_nodes": n, "n_features": n_features, "n_classes": n_classes, "feature_file": "features.bin",
        "edge_file": "edges.txt", "label_file": "labels.txt", "split_file": "split.json"}))
    np.arange(n * n_features, dtype="<f4").tofile(root / "features.bin")
    (root / "edges.txt").write_text("".join(f"{u} {v}\n" for u, v in edges))
    (root / "labels.txt").write_text("".join(f"{y}\n" for y in labels))
    (root / "split.json").write_text(json.dumps(split))
    return root


def test_triangle_pack(tmp_path):
    edges = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]
    write_pack(tmp_path, 3, edges, [0, 1, 0], {"train": [0], "val": [1], "test": [2]})
    g, split = load_dataset(tmp_path)
    assert g.n_nodes == 3 and g.n_edges == 3
    assert len(g.csr_targets) == 6
    assert g.csr_offsets[-1] == len(g.csr_targets)
    assert split.train_ids.tolist() == [0]
    np.testing.assert_array_equal(g.features, np.arange(6, dtype=np.float64).reshape(3, 2))


def test_one_directional_edge_is_a_symmetry_error(tmp_path):
    write_pack(tmp_path, 3, [(0, 1)], [0, 1, 0], {"train": [0], "val": [1], "test": [2]})
    with pytest.raises(GraphFormatError, match=r"\(0, 1\) present but \(1, 0\) missing"):
        load_dataset(tmp_path)
    g, _ = load_dataset(tmp_path, symmetrize=True)
    assert g.n_edges == 1


def test_pack_errors(tmp_path):
    write_pack(tmp_path, 3, [(0, 5), (5, 0)], [0, 1, 0], {"train": [0], "val": [1], "test": [2]})
    with pytest.raises(GraphFormatError, match="outside"):
        load_dataset(tmp_path)
    write_pack(tmp_path, 3, [], [0, 1, 0], {"train": [0], "val": [0], "test": [2]})
    with pytest.raises(GraphFormatError, match="overlap"):
        load_dataset(tmp_path)
    (tmp_path / "labels.txt").write_text("0\n1\n")
    with pytest.raises(GraphFormatError, match="label file"):
        load_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_round_trip(tmp_path, rng):
    g = random_graph(15, 0.3, rng)
    split = Split([0, 1, 2], [3, 4], [5, 6, 7])
    save_dataset(g, split, tmp_path)
    g2, s2 = load_dataset(tmp_path)
    np.testing.assert_array_equal(g.csr_offsets, g2.csr_offsets)
    np.testing.assert_array_equal(g.csr_targets, g2.csr_targets)
    np.testing.assert_allclose(g.features, g2.features, rtol=1e-6)
    np.testing.assert_array_equal(g.labels, g2.labels)
    assert s2.test_ids.tolist() == [5, 6, 7]


def test_duplicates_and_self_loops_dropped():
    g = Graph.from_edges(3, [(0, 1), (0, 1), (1, 1), (2, 0)], np.zeros((3, 1)), [0, 0, 1])
    assert g.n_edges == 2
    assert g.adjacency().diagonal().sum() == 0
    g.validate()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_csr_invariants(n, p, seed):
    g = random_graph(n, p, np.random.default_rng(seed), connect=False)
    assert np.all(np.diff(g.csr_offsets) >= 0)
    assert g.csr_offsets[-1] == len(g.csr_targets)
    a = g.adjacency()
    assert (a != a.T).nnz == 0


def test_row_normalization_examples():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)), [0, 1])
    np.testing.assert_allclose(normalize(g, "row").matrix.toarray(), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(normalize(g, "symmetric").matrix.toarray(), [[0.5, 0.5], [0.5, 0.5]])
    single = Graph.from_edges(1, [], np.zeros((1, 1)), [0])
    np.testing.assert_allclose(normalize(single, "row").matrix.toarray(), [[1.0]])


def test_isolated_node_without_self_loops_is_named():
    g = Graph.from_edges(3, [(0, 1)], np.zeros((3, 1)), [0, 1, 0])
    with pytest.raises(GraphFormatError, match="node 2"):
        normalize(g, "row", self_loops=False)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 0.6), st.integers(0, 2 ** 31))
def test_normalization_properties(n, p, seed):
    g = random_graph(n, p, np.random.default_rng(seed), connect=False)
    row = normalize(g, "row")
    assert np.max(np.abs(row.row_sums() - 1.0)) <= 1e-12
    sym = normalize(g, "symmetric").matrix.tocoo()
    deg = g.degrees() + 1
    np.testing.assert_allclose(sym.data, 1.0 / np.sqrt(deg[sym.row] * deg[sym.col]), rtol=1e-12)


def test_flip_labels_examples():
    labels = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
    np.testing.assert_array_equal(flip_labels(labels, range(10), 0.0, 1), labels)
    binary = np.array([0, 1, 1, 0])
    np.testing.assert_array_equal(flip_labels(binary, range(4), 1.0, 3), 1 - binary)
    for seed in range(100):
        out = flip_labels(labels, range(10), 0.3, seed, n_classes=3)
        assert np.sum(out != labels) == 3


def test_flip_only_touches_pool():
    labels = np.zeros(20, dtype=int)
    out = flip_labels(labels, range(10), 1.0, 0, n_classes=4)
    assert np.all(out[:10] != 0) and np.all(out[10:] == 0)


def test_subsample_train():
    split = Split(np.arange(140), np.arange(140, 200), np.arange(200, 300))
    assert subsample_train(split, 1.0, 0) is split
    half = subsample_train(split, 0.5, 0)
    assert len(half.train_ids) == 70
    assert set(half.train_ids) <= set(split.train_ids)
    np.testing.assert_array_equal(half.val_ids, split.val_ids)


def test_subsample_class_frequencies_chi_square():
    # 140 train nodes, 7 balanced classes; pooled over 200 seeds the kept class counts
    # should look like draws from the class proportions
    labels = np.repeat(np.arange(7), 20)
    split = Split(np.arange(140), [140], [141])
    counts = np.zeros(7)
    for seed in range(200):
        kept = subsample_train(split, 0.5, seed).train_ids
        counts += np.bincount(labels[kept], minlength=7)
    expected = np.full(7, counts.sum() / 7)
    stat = np.sum((counts - expected) ** 2 / expected)
    assert stat < chi2.ppf(0.999, df=6)


def test_label_state_recurrences():
    labels = np.array([0, 1, 0, 1, 0, 1])
    state = LabelState.initial(labels, [0, 1], [2, 3, 4, 5])
    state.add_pseudo([2, 3], [1, 1], 1)
    before = list(state.pseudo)
    state.add_pseudo([5], [0], 2)
    assert state.pseudo[:2] == before
    assert state.unlabeled == {4}
    assert state.training_pairs() == [(0, 0), (1, 1), (2, 1), (3, 1), (5, 0)]
    state.check()
    with pytest.raises(ValueError):
        state.add_pseudo([2], [0], 3)  # already pseudo-labeled
    with pytest.raises(ValueError):
        state.add_pseudo([4], [0], 1)  # round goes backwards


def test_split_eligible_pool():
    split = Split([0], [1], [2])
    assert split.eligible_pool(5).tolist() == [3, 4]
    assert math.isclose(len(split.eligible_pool(3)), 0)
