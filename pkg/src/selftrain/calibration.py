"""Confidence calibration: temperature scaling, ensemble temperature scaling, ECE."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .gcn import log_softmax, softmax

LOG_T_BOUNDS = (math.log(0.05), math.log(20.0))
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureScaler:
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("temperature must be positive")

    def probabilities(self, logits) -> np.ndarray:
        return softmax(np.asarray(logits, dtype=np.float64) / self.T)


@dataclass(frozen=True)
class EtsCalibrator:
    """Mixture ``w0 * softmax(z/T) + w1 * softmax(z) + w2 / C``."""

    T: float = 1.0
    w: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("temperature must be positive")
        w = np.asarray(self.w, dtype=np.float64)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"ETS weights must lie on the 2-simplex, got {self.w}")

    def probabilities(self, logits) -> np.ndarray:
        z = np.asarray(logits, dtype=np.float64)
        w0, w1, w2 = self.w
        return w0 * softmax(z / self.T) + w1 * softmax(z) + w2 / z.shape[-1]


def apply(calibrator, logits) -> np.ndarray:
    """Calibrated probabilities; ``calibrator=None`` is the plain softmax."""
    if calibrator is None:
        return softmax(np.asarray(logits, dtype=np.float64))
    return calibrator.probabilities(logits)


def nll(probs, labels) -> float:
    probs = np.asarray(probs)
    p = probs[np.arange(len(labels)), np.asarray(labels)]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


def temperature_nll(logits, labels, T: float) -> float:
    lp = log_softmax(np.asarray(logits, dtype=np.float64) / T)
    return float(-np.mean(lp[np.arange(len(labels)), np.asarray(labels)]))


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def _check_validation(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (n, C) with one label per row")
    degenerate = len(labels) < 2 or len(np.unique(labels)) < 2
    if degenerate:
        warnings.warn("degenerate validation set for calibration; using T = 1", RuntimeWarning, stacklevel=3)
    return logits, labels, degenerate


def fit_temperature(val_logits, val_labels, tol: float = 1e-4) -> TemperatureScaler:
    """Minimize validation NLL over log T in [ln 0.05, ln 20] by golden-section search."""
    logits, labels, degenerate = _check_validation(val_logits, val_labels)
    if degenerate:
        return TemperatureScaler(1.0)
    log_t = _golden_section(lambda lt: temperature_nll(logits, labels, math.exp(lt)), *LOG_T_BOUNDS, tol)
    T = math.exp(log_t)
    if temperature_nll(logits, labels, T) > temperature_nll(logits, labels, 1.0):
        T = 1.0
    return TemperatureScaler(T)


def simplex_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    pts = [(i, j, n - i - j) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.asarray(pts, dtype=np.float64) / n


def fit_ets(val_logits, val_labels, step: float = 0.01) -> EtsCalibrator:
    """Temperature first, then mixture weights by exhaustive grid over the simplex."""
    logits, labels, degenerate = _check_validation(val_logits, val_labels)
    if degenerate:
        return EtsCalibrator(1.0, (1.0, 0.0, 0.0))
    T = fit_temperature(logits, labels).T
    rows = np.arange(len(labels))
    comps = np.stack([
        softmax(logits / T)[rows, labels],
        softmax(logits)[rows, labels],
        np.full(len(labels), 1.0 / logits.shape[1]),
    ])
    grid = simplex_grid(step)
    p_true = grid @ comps
    scores = -np.mean(np.log(np.clip(p_true, 1e-300, None)), axis=1)
    # first minimum in grid order; (1, 0, 0) wins exact ties against later points
    ts_idx = int(np.flatnonzero((grid[:, 0] == 1.0))[0])
    best = int(np.argmin(scores))
    if scores[best] >= scores[ts_idx]:
        best = ts_idx
    return EtsCalibrator(T, tuple(float(x) for x in grid[best]))


def fit_calibrator(kind: str, val_logits, val_labels):
    if kind == "none":
        return None
    if kind == "ts":
        return fit_temperature(val_logits, val_labels)
    if kind == "ets":
        return fit_ets(val_logits, val_labels)
    raise ValueError(f"unknown calibration {kind!r}")


def ece(probabilities, labels, node_set=None, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width bins of max-probability."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if node_set is not None:
        nodes = np.asarray(list(node_set), dtype=np.int64)
        probs, labels = probs[nodes], labels[nodes]
    if len(labels) == 0:
        raise ValueError("ECE over an empty node set")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    # bins are (lo, hi]; confidence 0 falls in the first bin
    idx = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = idx == b
        if sel.any():
            total += sel.mean() * abs(conf[sel].mean() - correct[sel].mean())
    return float(total)
