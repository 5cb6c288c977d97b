"""Two-layer GCN in numpy with hand-written backprop and Adam.

    logits = A · dropout(ReLU(A · X · W1 + b1)) · W2 + b2

``A`` is the symmetric-normalized adjacency with self-loops. Training is
full-batch and single-threaded, so a fixed seed gives identical parameters.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedAdjacency

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class GcnModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    dropout_rate: float = 0.5
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GcnModel":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 300
    patience: int = 30
    hidden_dim: int = 16
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


def init_model(D: int, h: int, C: int, seed: int, dropout_rate: float = 0.5) -> GcnModel:
    """Glorot-uniform weights and zero biases."""
    if min(D, h, C) < 1:
        raise ValueError("D, h and C must all be >= 1")
    rng = np.random.default_rng(seed)
    b1 = np.sqrt(6.0 / (D + h))
    b2 = np.sqrt(6.0 / (h + C))
    return GcnModel(
        W1=rng.uniform(-b1, b1, size=(D, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-b2, b2, size=(h, C)),
        b2=np.zeros(C),
        dropout_rate=dropout_rate,
        seed=seed,
    )


def _as_operator(adj) -> sp.csr_matrix:
    if isinstance(adj, NormalizedAdjacency):
        if adj.mode != "symmetric":
            raise ValueError("GCN expects a symmetric-normalized adjacency")
        return adj.matrix
    return sp.csr_matrix(adj)


def _prepare_features(X):
    """Sparse storage for bag-of-words style features, dense otherwise."""
    if sp.issparse(X):
        return X.tocsr()
    X = np.asarray(X, dtype=np.float64)
    if X.size and np.count_nonzero(X) / X.size < 0.1:
        return sp.csr_matrix(X)
    return X


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class _Propagated:
    """Caches ``A @ X`` so each epoch only multiplies by W1."""

    def __init__(self, adj, X):
        self.A = _as_operator(adj)
        X = _prepare_features(X)
        if X.shape[0] != self.A.shape[0]:
            raise ValueError(f"features have {X.shape[0]} rows, adjacency has {self.A.shape[0]}")
        ax = self.A @ X
        if sp.issparse(ax):
            ax = ax.tocsr()
            if ax.nnz / max(1, ax.shape[0] * ax.shape[1]) > 0.3:
                ax = ax.toarray()
        self.AX = ax
        self.AT = self.A.T.tocsr()


def _forward(model: GcnModel, prop: _Propagated, mask: np.ndarray | None):
    if prop.AX.shape[1] != model.W1.shape[0]:
        raise ValueError(f"feature dim {prop.AX.shape[1]} does not match W1 rows {model.W1.shape[0]}")
    z1 = prop.AX @ model.W1 + model.b1
    h = np.maximum(z1, 0.0)
    hd = h * mask if mask is not None else h
    z2 = prop.A @ (hd @ model.W2) + model.b2
    return z1, hd, z2


def forward(model: GcnModel, adj_sym, X, train_mode: bool = False, rng: np.random.Generator | None = None):
    """Logits for every node. ``train_mode`` applies inverted dropout to the hidden layer."""
    prop = X if isinstance(X, _Propagated) else _Propagated(adj_sym, X)
    mask = None
    if train_mode and model.dropout_rate > 0:
        rng = rng if rng is not None else np.random.default_rng(model.seed)
        mask = _dropout_mask(rng, (prop.A.shape[0], model.W1.shape[1]), model.dropout_rate)
    return _forward(model, prop, mask)[2]


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def predict_proba(model: GcnModel, adj_sym, X) -> np.ndarray:
    return softmax(forward(model, adj_sym, X, train_mode=False))


def loss_and_grads(model: GcnModel, adj_sym, X, nodes, labels, weight_decay: float = 0.0,
                   mask: np.ndarray | None = None):
    """Mean softmax cross-entropy over ``nodes`` plus ``weight_decay/2 * ||W1||^2``.

    Returns ``(loss, grads)`` where ``grads`` maps parameter names to arrays.
    ``mask`` is a fixed (already rescaled) dropout mask for the hidden layer.
    """
    prop = X if isinstance(X, _Propagated) else _Propagated(adj_sym, X)
    nodes = np.asarray(nodes, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    z1, hd, z2 = _forward(model, prop, mask)

    logp = log_softmax(z2[nodes])
    n = len(nodes)
    loss = -logp[np.arange(n), labels].mean() + 0.5 * weight_decay * np.sum(model.W1 ** 2)

    dz2 = np.zeros_like(z2)
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    dz2[nodes] = g / n
    a_t_dz2 = prop.AT @ dz2
    grads = {
        "W2": hd.T @ a_t_dz2,
        "b2": dz2.sum(axis=0),
    }
    dh = a_t_dz2 @ model.W2.T
    if mask is not None:
        dh = dh * mask
    dz1 = dh * (z1 > 0)
    grads["b1"] = dz1.sum(axis=0)
    grads["W1"] = np.asarray(prop.AX.T @ dz1) + weight_decay * model.W1
    return float(loss), grads


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def accuracy(predictions, labels, node_set) -> float:
    nodes = np.asarray(list(node_set) if not isinstance(node_set, np.ndarray) else node_set, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("accuracy over an empty node set")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    return float(np.mean(predictions[nodes] == labels[nodes]))


def train(model: GcnModel, adj_sym, X, training_labels, val, config: TrainConfig):
    """Full-batch Adam on cross-entropy, keeping the snapshot with best validation accuracy.

    ``training_labels`` and ``val`` are sequences of ``(node, label)`` pairs.
    The recorded ``train_loss`` of an epoch is the dropout-free loss of the
    parameters entering that epoch. Returns ``(best_model, history)``.
    """
    if len(training_labels) == 0:
        raise ValueError("no training labels")
    if len(val) == 0 and config.patience > 0:
        raise ValueError("early stopping needs a non-empty validation set")
    prop = _Propagated(adj_sym, X)
    tr = np.asarray(training_labels, dtype=np.int64).reshape(-1, 2)
    va = np.asarray(val, dtype=np.int64).reshape(-1, 2)
    model = model.copy()
    params = model.params()
    opt = _Adam(params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    shape = (prop.A.shape[0], model.W1.shape[1])

    best, best_key, since_best = model.copy(), None, 0
    history: list[EpochRecord] = []
    for epoch in range(config.max_epochs):
        # dropout-free pass for monitoring
        z2 = _forward(model, prop, None)[2]
        logp = log_softmax(z2[tr[:, 0]])
        train_loss = float(-logp[np.arange(len(tr)), tr[:, 1]].mean()
                           + 0.5 * config.weight_decay * np.sum(model.W1 ** 2))
        if not np.isfinite(train_loss):
            raise TrainingDivergence(f"loss became {train_loss} at epoch {epoch}")
        if len(va):
            pred = z2[va[:, 0]].argmax(axis=1)
            val_acc = float(np.mean(pred == va[:, 1]))
            val_loss = float(-log_softmax(z2[va[:, 0]])[np.arange(len(va)), va[:, 1]].mean())
        else:
            val_acc, val_loss = float("nan"), float("nan")
        history.append(EpochRecord(epoch, train_loss, val_acc))

        key = (val_acc, -val_loss) if len(va) else (0.0, -train_loss)
        if best_key is None or key > best_key:
            best, best_key, since_best = model.copy(), key, 0
        else:
            since_best += 1
            if config.patience > 0 and since_best >= config.patience:
                break

        mask = _dropout_mask(rng, shape, model.dropout_rate) if model.dropout_rate > 0 else None
        _, grads = loss_and_grads(model, None, prop, tr[:, 0], tr[:, 1], config.weight_decay, mask)
        opt.step(params, grads)
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise TrainingDivergence(f"parameters became non-finite at epoch {epoch}")
    return best, history


def fit(adj_sym, X, n_classes: int, training_labels, val, config: TrainConfig):
    """Fresh init plus :func:`train`."""
    model = init_model(X.shape[1], config.hidden_dim, n_classes, config.seed, config.dropout_rate)
    return train(model, adj_sym, X, training_labels, val, config)


# -- persistence --------------------------------------------------------------

def save_checkpoint(model: GcnModel, path) -> None:
    """JSON header line with shapes, then float64 little-endian parameters."""
    header = {
        "shapes": {k: list(v.shape) for k, v in model.params().items()},
        "order": list(PARAM_NAMES),
        "dropout_rate": model.dropout_rate,
        "seed": model.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())


def load_checkpoint(path) -> GcnModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    flat = np.frombuffer(blob, dtype="<f8")
    out, pos = {}, 0
    for name in header["order"]:
        shape = tuple(header["shapes"][name])
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    if pos != flat.size:
        raise ValueError("checkpoint size does not match its header")
    return GcnModel(dropout_rate=header["dropout_rate"], seed=header["seed"], **out)


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_acc"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_acc)])
