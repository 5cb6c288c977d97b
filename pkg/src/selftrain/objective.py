"""Information-gain objective over predicted class distributions.

``value = H(mean prediction) - mean(H(prediction))``: the second term rewards
confident individual predictions, the first rewards a diverse label
distribution across the unlabeled nodes. All entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .gcn import softmax
from .propagation import PropagationState

RENORM_TOL = 1e-6


@dataclass(frozen=True)
class ObjectiveBreakdown:
    mean_individual_entropy: float
    aggregate_entropy: float

    @property
    def value(self) -> float:
        return self.aggregate_entropy - self.mean_individual_entropy


def _check_distributions(p: np.ndarray) -> np.ndarray:
    if np.any(p < -1e-9):
        raise ValueError("probabilities contain negative entries")
    p = np.clip(p, 0.0, None)
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > RENORM_TOL):
        raise ValueError("probability rows do not sum to 1")
    return p / s


def entropy(p) -> float:
    """Shannon entropy of one distribution, with 0 log 0 = 0."""
    p = _check_distributions(np.asarray(p, dtype=np.float64))
    return float(entr(p).sum())


def _row_entropies(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(axis=1)


def objective(probs) -> ObjectiveBreakdown:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("objective needs a non-empty (n, C) probability matrix")
    p = _check_distributions(probs)
    return ObjectiveBreakdown(
        mean_individual_entropy=float(_row_entropies(p).mean()),
        aggregate_entropy=float(entr(p.mean(axis=0)).sum()),
    )


def objective_from_logits(logits: np.ndarray) -> float:
    """Objective value of ``softmax(logits)`` rows; the hot path, skips validation."""
    p = softmax(logits)
    return float(entr(p.mean(axis=0)).sum() - _row_entropies(p).mean())


def utility(subset, state: PropagationState, unlabeled, exclude_selected: bool = False) -> float:
    """Objective of the softmaxed propagation estimate restricted to ``unlabeled``."""
    unlabeled = np.asarray(list(unlabeled) if not isinstance(unlabeled, np.ndarray) else unlabeled,
                           dtype=np.int64)
    pos = state.positions(subset)
    return utility_positions(state, pos, unlabeled, exclude_selected)


def utility_positions(state: PropagationState, pos: np.ndarray, unlabeled: np.ndarray,
                      exclude_selected: bool = False) -> float:
    if len(unlabeled) == 0:
        raise ValueError("utility needs a non-empty unlabeled set")
    h = state.compose_positions(pos)
    rows = unlabeled
    if exclude_selected and len(pos):
        rows = np.setdiff1d(unlabeled, state.candidates[pos], assume_unique=True)
        if len(rows) == 0:
            raise ValueError("no unlabeled nodes left after excluding the selected set")
    return objective_from_logits(h[rows])


def mutual_information_decomposition_check(joint) -> tuple[float, float]:
    """Return ``(I(y;u) by the double sum, H(E_y f(u|y)) - E_y H(f(u|y)))``."""
    joint = np.asarray(joint, dtype=np.float64)
    if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint must be a probability table")
    py = joint.sum(axis=1)
    pu = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(py, pu)
    lhs = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))

    keep = py > 0
    cond = joint[keep] / py[keep, None]
    mean_cond = py[keep] @ cond
    rhs = float(entr(mean_cond).sum() - py[keep] @ entr(cond).sum(axis=1))
    return lhs, rhs


class SubsetUtility:
    """``utility`` specialised to one state and unlabeled set; callable on node subsets.

    Only the unlabeled rows of the base and candidate columns are kept, so a
    call costs ``|unlabeled| * |S| * C``.
    """

    def __init__(self, state: PropagationState, unlabeled, exclude_selected: bool = False):
        self.state = state
        self.unlabeled = np.asarray(unlabeled, dtype=np.int64)
        if len(self.unlabeled) == 0:
            raise ValueError("utility needs a non-empty unlabeled set")
        self.exclude_selected = exclude_selected
        self._fast = state.columns is not None
        if self._fast:
            self._base = state.base[self.unlabeled]
            self._cols = state.columns[self.unlabeled]
        row_of = {int(v): r for r, v in enumerate(self.unlabeled)}
        self._cand_row = np.array([row_of.get(int(v), -1) for v in state.candidates], dtype=np.int64)

    def positions_value(self, pos: np.ndarray) -> float:
        if not self._fast:
            return utility_positions(self.state, pos, self.unlabeled, self.exclude_selected)
        h = self._base + self._cols[:, pos] @ self.state.candidate_logits[pos] if len(pos) else self._base
        if self.exclude_selected and len(pos):
            drop = self._cand_row[pos]
            keep = np.ones(len(h), dtype=bool)
            keep[drop[drop >= 0]] = False
            if not keep.any():
                raise ValueError("no unlabeled nodes left after excluding the selected set")
            h = h[keep]
        return objective_from_logits(h)

    def __call__(self, subset) -> float:
        return self.positions_value(self.state.positions(subset))
