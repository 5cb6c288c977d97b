"""Personalized-PageRank propagation of teacher logits.

The student's logits are estimated as ``alpha (I - (1-alpha) A)^-1 X`` where
``A`` is the row-normalized adjacency with self-loops and ``X`` holds teacher
logits on anchored rows and zeros elsewhere. Propagation is linear, so the
estimate for ``anchored + S`` is the anchored base plus one precomputed
single-source term per candidate in ``S``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedAdjacency

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PprConfig:
    alpha: float = 0.1
    steps: int = 10
    tol: float = 1e-9
    exact: bool = False
    max_steps: int = 100
    delta_memory_cap_mb: float = 512.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")

    @property
    def step_budget(self) -> int:
        return max(self.steps, self.max_steps) if self.exact else self.steps


def _row_stochastic(adj_row) -> sp.csr_matrix:
    if isinstance(adj_row, NormalizedAdjacency):
        a = adj_row.matrix
    else:
        a = sp.csr_matrix(adj_row, dtype=np.float64)
    sums = np.asarray(a.sum(axis=1)).ravel()
    if np.any(np.abs(sums - 1.0) > 1e-10) or (a.nnz and a.data.min() < 0):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"adjacency is not row-stochastic (row {bad} sums to {sums[bad]!r})")
    return a


def ppr_propagate(adj_row, masked_logits, cfg: PprConfig = PprConfig(), return_steps: bool = False):
    """Power iteration ``X_h = (1-alpha) A X_{h-1} + alpha X_0`` from ``X_0 = masked_logits``.

    Stops after ``cfg.step_budget`` steps or once the max-abs update drops
    below ``cfg.tol``.
    """
    a = _row_stochastic(adj_row)
    x0 = np.asarray(masked_logits, dtype=np.float64)
    if x0.shape[0] != a.shape[0]:
        raise ValueError(f"logit matrix has {x0.shape[0]} rows, adjacency has {a.shape[0]}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("masked logits must be finite")
    return _power_iterate(a, x0, cfg, return_steps)


def _power_iterate(a: sp.csr_matrix, x0: np.ndarray, cfg: PprConfig, return_steps: bool = False):
    alpha = cfg.alpha
    tele = alpha * x0
    x = x0
    steps = 0
    for steps in range(1, cfg.step_budget + 1):
        nxt = (1.0 - alpha) * (a @ x) + tele
        delta = np.max(np.abs(nxt - x)) if x.size else 0.0
        x = nxt
        if delta < cfg.tol:
            break
    return (x, steps) if return_steps else x


def ppr_dense(adj_row, masked_logits, alpha: float) -> np.ndarray:
    """Closed form ``alpha (I - (1-alpha) A)^-1 X`` by a dense solve; small graphs only."""
    a = _row_stochastic(adj_row).toarray()
    n = a.shape[0]
    return alpha * np.linalg.solve(np.eye(n) - (1.0 - alpha) * a, np.asarray(masked_logits, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PropagationState:
    """Propagated base logits plus per-candidate propagation columns.

    For candidate ``i`` with teacher logit row ``x_i`` the single-source
    propagation is ``p_i x_i^T`` where ``p_i`` is the PPR of the indicator of
    ``i``; only ``p_i`` is stored (column ``i`` of ``columns``).
    """

    adj_row: sp.csr_matrix
    base: np.ndarray
    candidates: np.ndarray
    candidate_logits: np.ndarray
    columns: np.ndarray | None
    anchored: np.ndarray
    cfg: PprConfig
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index.update({int(v): k for k, v in enumerate(self.candidates)})
        for a in (self.base, self.candidates, self.candidate_logits, self.anchored):
            a.setflags(write=False)
        if self.columns is not None:
            self.columns.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.base.shape[0]

    def positions(self, subset: Iterable[int]) -> np.ndarray:
        try:
            return np.fromiter((self._index[int(v)] for v in subset), dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]} is not a candidate of this propagation state") from None

    def delta(self, node: int) -> np.ndarray:
        """Propagation of the matrix that is zero except for candidate ``node``'s logit row."""
        (k,) = self.positions([node])
        return np.outer(self._column(k), self.candidate_logits[k])

    @property
    def candidate_deltas(self) -> dict[int, np.ndarray]:
        return {int(v): self.delta(int(v)) for v in self.candidates}

    def _column(self, k: int) -> np.ndarray:
        if self.columns is not None:
            return self.columns[:, k]
        e = np.zeros((self.n_nodes, 1))
        e[self.candidates[k], 0] = 1.0
        return _power_iterate(self.adj_row, e, self.cfg)[:, 0]

    def compose_positions(self, pos: np.ndarray) -> np.ndarray:
        """``base + sum of deltas`` for candidates given by position in ``candidates``."""
        if len(pos) == 0:
            return self.base.copy()
        if self.columns is not None:
            return self.base + self.columns[:, pos] @ self.candidate_logits[pos]
        x0 = np.zeros_like(self.base)
        x0[self.candidates[pos]] = self.candidate_logits[pos]
        return self.base + _power_iterate(self.adj_row, x0, self.cfg)


def build_state(adj_row, teacher_logits, anchored, candidates, cfg: PprConfig = PprConfig()) -> PropagationState:
    """Propagate the anchored logits once and every candidate's indicator column."""
    a = _row_stochastic(adj_row)
    logits = np.asarray(teacher_logits, dtype=np.float64)
    n = a.shape[0]
    if logits.shape[0] != n:
        raise ValueError("teacher logits must have one row per node")
    anchored = np.unique(np.asarray(list(anchored), dtype=np.int64))
    candidates = np.asarray(list(candidates), dtype=np.int64)
    if len(np.unique(candidates)) != len(candidates):
        raise ValueError("duplicate candidate ids")
    overlap = np.intersect1d(anchored, candidates)
    if len(overlap):
        raise ValueError(f"node {overlap[0]} is both anchored and a candidate")

    x0 = np.zeros_like(logits)
    x0[anchored] = logits[anchored]
    base = _power_iterate(a, x0, cfg)

    k = len(candidates)
    columns = None
    if n * k * 8 <= cfg.delta_memory_cap_mb * 2 ** 20:
        e = np.zeros((n, k))
        e[candidates, np.arange(k)] = 1.0
        columns = _power_iterate(a, e, cfg)
    else:
        log.info("candidate columns (%d x %d) exceed the memory cap; recomputing per query", n, k)
    return PropagationState(a, base, candidates, logits[candidates].copy(), columns, anchored, cfg)


def compose(state: PropagationState, subset: Iterable[int]) -> np.ndarray:
    """Estimated logits with ``subset`` added to the anchored set."""
    return state.compose_positions(state.positions(subset))


def influence_vs_random_walk_check(adj_row, L: int, n_features: int = 3, eps: float = 1e-3,
                                   rng: np.random.Generator | None = None) -> float:
    """Compare a linear GCN's finite-difference influence distribution with L-step walks.

    The surrogate is ``x^(l) = A x^(l-1) W`` with a shared random ``W``. For
    each target node ``j`` the influence of ``i`` is the summed absolute
    Jacobian of ``x_j^(L)`` w.r.t. ``x_i^(0)``, normalized over ``i``; it is
    compared with row ``j`` of ``A^L``. Returns the max total-variation
    distance over target nodes.
    """
    a = _row_stochastic(adj_row).toarray()
    n = a.shape[0]
    rng = rng if rng is not None else np.random.default_rng(0)
    W = rng.normal(size=(n_features, n_features))
    x = rng.normal(size=(n, n_features))

    def model(inp):
        out = inp
        for _ in range(L):
            out = a @ out @ W
        return out

    influence = np.zeros((n, n))  # [j, i]
    for i in range(n):
        for f in range(n_features):
            up, dn = x.copy(), x.copy()
            up[i, f] += eps
            dn[i, f] -= eps
            jac = (model(up) - model(dn)) / (2 * eps)  # d x^(L)[:, :] / d x_i,f
            influence[:, i] += np.abs(jac).sum(axis=1)
    influence /= influence.sum(axis=1, keepdims=True)
    walk = np.linalg.matrix_power(a, L)
    return float(0.5 * np.abs(influence - walk).sum(axis=1).max())
