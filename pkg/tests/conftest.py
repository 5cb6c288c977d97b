import numpy as np
import pytest

from selftrain.graph import Graph


def random_graph(n, p, rng, n_features=4, n_classes=3, connect=True):
    """Erdos-Renyi graph; with ``connect`` a path is added so no node is isolated."""
    upper = np.triu(rng.random((n, n)) < p, 1)
    edges = np.argwhere(upper)
    if connect:
        edges = np.vstack([edges, np.column_stack([np.arange(n - 1), np.arange(1, n)])]) if n > 1 else edges
    X = rng.normal(size=(n, n_features))
    y = rng.integers(0, n_classes, size=n)
    return Graph.from_edges(n, edges, X, y, n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_citation(seed=0):
    from selftrain.datasets import make_citation_graph
    return make_citation_graph(seed=seed, class_sizes=(40, 40, 40), n_edges=300, n_features=100,
                               topic_words=20, words_per_node=10, topic_share=0.4, train_per_class=5,
                               n_val=30, n_test=40)


def fast_config(**kw):
    from selftrain.orchestrator import RunConfig
    base = dict(rounds=3, select_k=5, pool_K=10, banzhaf_samples=60, seeds=[0],
                train={"max_epochs": 40, "patience": 10}, record_wall_time=False)
    base.update(kw)
    return RunConfig.from_dict(base)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
