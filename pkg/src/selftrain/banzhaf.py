"""k-bounded Banzhaf values: exhaustive enumeration and Maximum Sample Reuse.

The k-bounded value of player ``i`` over a pool of ``K`` players is

    phi(i) = n_s^-1 * sum_{S subset pool - i, |S| <= k-1} [U(S + i) - U(S)],
    n_s    = sum_{m=1..k} C(K-1, m-1).

MSR draws ``B`` coalitions once, evaluates ``U`` once per coalition and
scores every player by ``mean U over samples containing it`` minus ``mean U
over samples without it``.

Rewriting the sum, ``phi(i)`` is the mean of ``U(T)`` over the ``n_s``
coalitions ``T`` containing ``i`` with ``|T| <= k`` minus the mean of ``U(S)``
over the ``n_s`` coalitions ``S`` without ``i`` with ``|S| <= k-1``. The
``coalition_uniform`` mode samples coalitions uniformly from sizes 0..k and
leaves size-k samples out of the "without" group, which makes the MSR
estimate consistent for ``phi``. The other two modes keep every sample in one
of the two groups and converge to a differently weighted average.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .graph import LabelState

log = logging.getLogger(__name__)

EXHAUSTIVE_MAX_POOL = 16
SAMPLING_MODES = ("coalition_uniform", "size_uniform", "binomial_truncated")


@dataclass(frozen=True)
class CandidatePool:
    """Top-K confident unlabeled nodes, ordered by confidence (desc) then id."""

    nodes: np.ndarray
    pseudo_labels: np.ndarray
    teacher_logit_rows: np.ndarray
    confidences: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)


def select_candidates(calibrated_probs, label_state: LabelState, K: int, teacher_logits=None) -> CandidatePool:
    probs = np.asarray(calibrated_probs, dtype=np.float64)
    unl = label_state.unlabeled_array()
    if len(unl) == 0:
        raise ValueError("no unlabeled nodes left")
    conf = probs[unl].max(axis=1)
    order = np.lexsort((unl, -conf))[:K]
    nodes = unl[order]
    logits = np.asarray(teacher_logits)[nodes] if teacher_logits is not None else np.log(probs[nodes])
    return CandidatePool(nodes, probs[nodes].argmax(axis=1), logits, conf[order])


def _players(pool) -> list:
    return [int(v) for v in pool.nodes] if isinstance(pool, CandidatePool) else list(pool)


def n_coalitions(K: int, k: int) -> int:
    """``n_s``: number of coalitions containing a fixed player with size at most ``k``."""
    return sum(math.comb(K - 1, m - 1) for m in range(1, k + 1))


def exhaustive_banzhaf(pool, U: Callable[[frozenset], float], k: int) -> np.ndarray:
    """Exact k-bounded Banzhaf values, one ``U`` call per coalition of size <= k."""
    players = _players(pool)
    K = len(players)
    if K > EXHAUSTIVE_MAX_POOL:
        raise ValueError(f"exhaustive enumeration limited to {EXHAUSTIVE_MAX_POOL} players, got {K}")
    if not 1 <= k <= K:
        raise ValueError(f"k must be in [1, {K}]")
    table = utility_table(players, U, k)
    n_s = n_coalitions(K, k)
    phi = np.zeros(K)
    for a, p in enumerate(players):
        others = players[:a] + players[a + 1:]
        total = 0.0
        for size in range(k):
            for rest in itertools.combinations(others, size):
                s = frozenset(rest)
                total += table[s | {p}] - table[s]
        phi[a] = total / n_s
    return phi


def utility_table(players: Sequence[Hashable], U: Callable[[frozenset], float], k: int) -> dict:
    """``U`` on every coalition of size 0..k."""
    table = {}
    for size in range(k + 1):
        for combo in itertools.combinations(players, size):
            s = frozenset(combo)
            table[s] = float(U(s))
    return table


@dataclass
class BanzhafEstimate:
    players: list
    values: np.ndarray
    n_in: np.ndarray
    n_out: np.ndarray
    sum_in: np.ndarray
    sum_out: np.ndarray
    variance: np.ndarray
    membership: np.ndarray
    utilities: np.ndarray

    @property
    def B(self) -> int:
        return len(self.utilities)


def sample_coalitions(K: int, k: int, B: int, rng_seed: int, sampling: str = "coalition_uniform") -> np.ndarray:
    """Boolean membership matrix (B x K), drawn up front from one seeded stream.

    ``size_uniform``: size uniform on 1..k, then a uniform subset of that size.
    ``binomial_truncated``: each player joins with probability 1/2,
    conditioned on size <= k, i.e. uniform over all coalitions of size 0..k.
    ``coalition_uniform`` samples like ``binomial_truncated``.
    """
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    k = min(k, K)
    if sampling == "size_uniform":
        sizes = np.arange(1, k + 1)
        weights = np.ones(k)
    else:
        sizes = np.arange(0, k + 1)
        logw = np.array([math.lgamma(K + 1) - math.lgamma(m + 1) - math.lgamma(K - m + 1) for m in sizes])
        weights = np.exp(logw - logw.max())
    weights = weights / weights.sum()
    rng = np.random.default_rng(rng_seed)
    m = sizes[rng.choice(len(sizes), size=B, p=weights)]
    # a uniform m-subset: the players holding the m smallest of K iid uniform keys
    rank = np.argsort(np.argsort(rng.random((B, K)), axis=1), axis=1)
    return rank < m[:, None]


def msr_banzhaf(pool, U: Callable[[frozenset], float], k: int, B: int, rng_seed: int,
                sampling: str = "coalition_uniform", n_workers: int = 1, cache: bool = False) -> BanzhafEstimate:
    """Maximum Sample Reuse estimate of k-bounded Banzhaf values.

    Players lacking in- or out-samples get ``-inf`` so they are never
    selected. Results do not depend on ``n_workers``: all coalitions are drawn
    before any evaluation and the reduction runs over the full utility array.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    players = _players(pool)
    K = len(players)
    if B * min(k, K) / (2 * K) < 5:
        log.warning("B=%d samples give few memberships per player (K=%d, k=%d)", B, K, k)
    member = sample_coalitions(K, k, B, rng_seed, sampling)
    coalitions = [frozenset(players[j] for j in np.flatnonzero(row)) for row in member]

    memo: dict = {}

    def evaluate(s: frozenset) -> float:
        if cache:
            if s not in memo:
                memo[s] = float(U(s))
            return memo[s]
        return float(U(s))

    if n_workers > 1 and not cache:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            util = np.fromiter(ex.map(evaluate, coalitions), dtype=np.float64, count=B)
    else:
        util = np.fromiter((evaluate(s) for s in coalitions), dtype=np.float64, count=B)
    out_cap = min(k, K) - 1 if sampling == "coalition_uniform" else K
    return _reduce(players, member, util, out_cap)


def _reduce(players, member: np.ndarray, util: np.ndarray, out_cap: int) -> BanzhafEstimate:
    """Accumulate per-player sums; out-samples larger than ``out_cap`` are ignored."""
    m = member.astype(np.float64)
    out = (~member) & (member.sum(axis=1) <= out_cap)[:, None]
    o = out.astype(np.float64)
    n_in = member.sum(axis=0)
    n_out = out.sum(axis=0)
    sum_in = util @ m
    sum_out = util @ o
    sq_in = (util ** 2) @ m
    sq_out = (util ** 2) @ o
    ok = (n_in > 0) & (n_out > 0)
    values = np.full(len(players), -np.inf)
    variance = np.full(len(players), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_in = sum_in / n_in
        mean_out = sum_out / n_out
        values[ok] = (mean_in - mean_out)[ok]
        var_in = np.maximum(sq_in / n_in - mean_in ** 2, 0.0)
        var_out = np.maximum(sq_out / n_out - mean_out ** 2, 0.0)
        variance[ok] = (var_in / n_in + var_out / n_out)[ok]
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} players lack in- or out-samples; their value is -inf",
                      RuntimeWarning, stacklevel=3)
    return BanzhafEstimate(players, values, n_in, n_out, sum_in, sum_out, variance, member, util)


def individual_gains(pool, U: Callable[[frozenset], float]) -> np.ndarray:
    """``U({i}) - U(empty)`` per player: the ranking score without coalition averaging."""
    players = _players(pool)
    empty = float(U(frozenset()))
    return np.array([float(U(frozenset([p]))) - empty for p in players])


def top_k_select(estimates, pool: CandidatePool, k: int) -> list[tuple[int, int]]:
    """Top ``k`` by value; ties go to higher confidence, then smaller node id."""
    values = estimates.values if isinstance(estimates, BanzhafEstimate) else np.asarray(estimates)
    if k > len(pool):
        raise ValueError("k exceeds the pool size")
    order = np.lexsort((pool.nodes, -pool.confidences, -values))[:k]
    return [(int(pool.nodes[i]), int(pool.pseudo_labels[i])) for i in order]


# -- ranking robustness under utility perturbation ----------------------------

@dataclass
class RobustnessCertificate:
    tau: float
    bound: float
    n_pairs: int
    n_trials: int
    agreements: int
    pair_inversions: int
    hypotheses_met: bool


def distinguishability(table: dict, players: Sequence, i, j, m: int) -> float:
    """Average of ``U(S+i) - U(S+j)`` over ``S`` in pool - {i, j} with ``|S| = m-1``."""
    rest = [p for p in players if p != i and p != j]
    diffs = [table[frozenset(c) | {i}] - table[frozenset(c) | {j}] for c in itertools.combinations(rest, m - 1)]
    return float(np.mean(diffs))


def _phi_from_table(players, table, k):
    return exhaustive_banzhaf(players, table.__getitem__, k)


def rank_robustness_probe(U_table: dict, players: Sequence, k: int, noise_scale: float = 1.0,
                          n_trials: int = 100, rng: np.random.Generator | None = None) -> RobustnessCertificate:
    """Check that perturbations within the separation bound never swap the Banzhaf order.

    ``tau`` is the smallest distinguishability ``Delta^(m)_{i,j}`` over pairs
    with ``phi(i) > phi(j)`` and every coalition size entering ``phi``
    (m = 1..k). Each trial adds a random perturbation of norm
    ``noise_scale * tau * sqrt(sum_{m=1}^{k-1} C(K-2, m-1))`` to the table.
    When ``tau <= 0`` the hypotheses fail; the trials still run and are
    reported, but nothing is certified. ``agreements`` counts trials with no
    inverted pair.
    """
    players = list(players)
    K = len(players)
    rng = rng if rng is not None else np.random.default_rng(0)
    keys = [s for s in U_table if len(s) <= k]
    base = np.array([U_table[s] for s in keys])
    phi = _phi_from_table(players, U_table, k)

    pairs = [(a, b) for a in range(K) for b in range(K) if phi[a] > phi[b]]
    tau = math.inf
    for a, b in pairs:
        for m in range(1, k + 1):
            tau = min(tau, distinguishability(U_table, players, players[a], players[b], m))
    if not pairs:
        tau = 0.0
    bound = tau * math.sqrt(sum(math.comb(K - 2, m - 1) for m in range(1, k))) if tau > 0 else 0.0

    agreements = pair_inversions = 0
    sign = np.sign(phi[:, None] - phi[None, :])
    for _ in range(n_trials):
        noise = rng.normal(size=len(keys))
        norm = np.linalg.norm(noise)
        noise *= (noise_scale * bound / norm) if norm > 0 else 0.0
        phi_hat = _phi_from_table(players, dict(zip(keys, base + noise)), k)
        flipped = int(np.sum(np.triu(sign * np.sign(phi_hat[:, None] - phi_hat[None, :]) < 0, 1)))
        pair_inversions += flipped
        agreements += flipped == 0
    return RobustnessCertificate(tau, bound, len(pairs), n_trials, agreements, pair_inversions, tau > 0)
