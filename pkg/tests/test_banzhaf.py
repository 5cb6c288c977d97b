import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selftrain.banzhaf import (CandidatePool, exhaustive_banzhaf, individual_gains, msr_banzhaf, n_coalitions,
                               rank_robustness_probe, sample_coalitions, select_candidates, top_k_select,
                               utility_table)
from selftrain.graph import LabelState

AB_TABLE = {frozenset(): 0.0, frozenset("a"): 1.0, frozenset("b"): 2.0, frozenset("ab"): 4.0}


def additive(weights):
    return lambda s: float(sum(weights[i] for i in s))


def pool_of(nodes, conf=None):
    nodes = np.asarray(nodes)
    conf = np.linspace(0.9, 0.5, len(nodes)) if conf is None else np.asarray(conf)
    return CandidatePool(nodes, np.zeros(len(nodes), dtype=int), np.zeros((len(nodes), 2)), conf)


def test_two_player_table():
    assert n_coalitions(2, 2) == 2
    np.testing.assert_allclose(exhaustive_banzhaf(["a", "b"], AB_TABLE.__getitem__, 2), [1.5, 2.5])


def test_individual_gains_pick_b():
    gains = individual_gains(["a", "b"], AB_TABLE.__getitem__)
    np.testing.assert_allclose(gains, [1.0, 2.0])
    pool = CandidatePool(np.array([0, 1]), np.array([0, 1]), np.zeros((2, 2)), np.array([0.9, 0.9]))
    assert top_k_select(gains, pool, 1) == [(1, 1)]


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 7), st.integers(1, 7), st.integers(0, 2 ** 31))
def test_additive_and_constant_exhaustive(K, k, seed):
    k = min(k, K)
    w = np.random.default_rng(seed).normal(size=K)
    np.testing.assert_allclose(exhaustive_banzhaf(list(range(K)), additive(w), k), w, atol=1e-12)
    np.testing.assert_allclose(exhaustive_banzhaf(list(range(K)), lambda s: 3.0, k), 0.0, atol=1e-12)


def brute_force_banzhaf(players, U, k):
    """phi by the alternative reading: mean over T containing i minus mean over S without i."""
    out = []
    for p in players:
        others = [q for q in players if q != p]
        with_p = [U(frozenset(c) | {p}) for m in range(k) for c in itertools.combinations(others, m)]
        without = [U(frozenset(c)) for m in range(k) for c in itertools.combinations(others, m)]
        out.append(np.mean(with_p) - np.mean(without))
    return np.array(out)


def test_exhaustive_matches_group_mean_form():
    rng = np.random.default_rng(9)
    players = list(range(6))
    table = {frozenset(c): rng.normal() for m in range(4) for c in itertools.combinations(players, m)}
    np.testing.assert_allclose(exhaustive_banzhaf(players, table.__getitem__, 3),
                               brute_force_banzhaf(players, table.__getitem__, 3), atol=1e-12)


def test_exhaustive_guards():
    with pytest.raises(ValueError):
        exhaustive_banzhaf(list(range(17)), lambda s: 0.0, 2)
    with pytest.raises(ValueError):
        exhaustive_banzhaf(list(range(3)), lambda s: 0.0, 4)


def test_msr_calls_utility_exactly_b_times():
    calls = []

    def U(s):
        calls.append(s)
        return len(s)

    est = msr_banzhaf(pool_of(range(10)), U, 3, 700, rng_seed=1)
    assert len(calls) == 700 == est.B


@pytest.mark.parametrize("sampling", ["coalition_uniform", "size_uniform", "binomial_truncated"])
def test_msr_constant_utility_is_zero(sampling):
    est = msr_banzhaf(pool_of(range(8)), lambda s: 2.5, 3, 2000, 0, sampling)
    ok = (est.n_in > 0) & (est.n_out > 0)
    assert ok.all()
    assert np.all(est.values[ok] == 0.0)


def test_msr_additive_ranking():
    agree = 0
    for trial in range(20):
        # distinct weights at unit spacing in random order; MSR noise at this B is about 0.03
        w = np.random.default_rng(trial).permutation(8).astype(float)
        est = msr_banzhaf(pool_of(range(8)), additive(w), 3, 20_000, rng_seed=trial)
        agree += np.array_equal(np.argsort(-est.values), np.argsort(-w))
    assert agree >= 19


def test_msr_is_unbiased_for_bounded_value():
    rng = np.random.default_rng(4)
    players = list(range(6))
    table = {frozenset(c): rng.normal() for m in range(4) for c in itertools.combinations(players, m)}
    exact = exhaustive_banzhaf(players, table.__getitem__, 3)
    est = msr_banzhaf(players, table.__getitem__, 3, 200_000, rng_seed=0)
    assert np.max(np.abs(est.values - exact) / np.sqrt(est.variance)) < 5


def test_msr_independent_of_workers():
    w = np.random.default_rng(0).normal(size=12)
    a = msr_banzhaf(pool_of(range(12)), additive(w), 4, 3000, rng_seed=5, n_workers=1)
    b = msr_banzhaf(pool_of(range(12)), additive(w), 4, 3000, rng_seed=5, n_workers=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_sampling_modes_sizes():
    m = sample_coalitions(10, 3, 5000, 0, "size_uniform").sum(axis=1)
    assert m.min() == 1 and m.max() == 3
    m = sample_coalitions(10, 3, 5000, 0, "coalition_uniform").sum(axis=1)
    freq = np.bincount(m, minlength=4) / 5000
    expected = np.array([math.comb(10, s) for s in range(4)], dtype=float)
    np.testing.assert_allclose(freq, expected / expected.sum(), atol=0.02)
    with pytest.raises(ValueError):
        sample_coalitions(10, 3, 5, 0, "poisson")


def test_missing_samples_get_minus_inf():
    with pytest.warns(RuntimeWarning):
        est = msr_banzhaf(pool_of(range(30)), lambda s: 1.0, 1, 3, rng_seed=0)
    assert np.isneginf(est.values).any()


def test_select_candidates_tie_rule():
    probs = np.array([[0.9, 0.1], [0.9, 0.1], [0.8, 0.2], [0.5, 0.5]])
    state = LabelState.initial(np.zeros(5, dtype=int), [4], [0, 1, 2, 3])
    pool = select_candidates(probs, state, 2)
    assert pool.nodes.tolist() == [0, 1]
    assert len(select_candidates(probs, state, 10)) == 4


def test_top_k_select_rules():
    pool = pool_of([10, 11, 12], conf=[0.8, 0.9, 0.7])
    assert [v for v, _ in top_k_select(np.array([0.1, 0.3, 0.2]), pool, 3)] == [11, 12, 10]
    assert top_k_select(np.array([1.0, 1.0, 0.0]), pool, 1)[0][0] == 11
    with pytest.raises(ValueError):
        top_k_select(np.zeros(3), pool, 4)


def test_probe_additive_well_separated():
    players = list(range(6))
    table = utility_table(players, additive(np.arange(6, dtype=float)), 3)
    cert = rank_robustness_probe(table, players, 3, rng=np.random.default_rng(0))
    assert cert.hypotheses_met and cert.tau == pytest.approx(1.0)
    assert cert.agreements == cert.n_trials == 100


def test_probe_zero_perturbation():
    players = list(range(5))
    table = utility_table(players, additive(np.arange(5, dtype=float)), 2)
    cert = rank_robustness_probe(table, players, 2, noise_scale=0.0)
    assert cert.pair_inversions == 0


def test_probe_large_perturbation_can_invert():
    players = list(range(5))
    w = np.array([0.0, 1.0, 2.0, 3.0, 3.001])
    table = utility_table(players, additive(w), 2)
    cert = rank_robustness_probe(table, players, 2, noise_scale=10.0, n_trials=200,
                                 rng=np.random.default_rng(1))
    assert cert.pair_inversions >= 1
