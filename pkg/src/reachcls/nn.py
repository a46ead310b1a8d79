"""Feedforward binary classifiers trained from scratch with RMSprop.

Architecture is fixed at input -> 20 -> 20 -> 2 with ReLU hidden activations
and a softmax head. Inputs are normalized per dimension to [-1, 1] through an
affine map stored with the classifier (state scales differ by orders of
magnitude across models). Label 1 means "max corner" of the input interval.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Array = np.ndarray

HIDDEN = 20
N_CLASSES = 2
INIT_SCALE = 0.1
RMSPROP_EPS = 1e-8


@dataclass(frozen=True)
class MlpClassifier:
    w1: Array
    b1: Array
    w2: Array
    b2: Array
    w3: Array
    b3: Array
    norm_lo: Array   # input normalizer: maps [norm_lo, norm_hi] -> [-1, 1]
    norm_hi: Array

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def params(self) -> tuple:
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def normalize(self, states: Array) -> Array:
        span = self.norm_hi - self.norm_lo
        return 2.0 * (states - self.norm_lo) / span - 1.0

    def to_dict(self) -> dict:
        return {
            "w1": self.w1.tolist(), "b1": self.b1.tolist(),
            "w2": self.w2.tolist(), "b2": self.b2.tolist(),
            "w3": self.w3.tolist(), "b3": self.b3.tolist(),
            "norm_lo": self.norm_lo.tolist(), "norm_hi": self.norm_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpClassifier":
        arrs = {k: np.asarray(d[k], dtype=float) for k in
                ("w1", "b1", "w2", "b2", "w3", "b3", "norm_lo", "norm_hi")}
        clf = cls(**arrs)
        n = clf.input_dim
        shapes = {"w1": (n, HIDDEN), "b1": (HIDDEN,), "w2": (HIDDEN, HIDDEN),
                  "b2": (HIDDEN,), "w3": (HIDDEN, N_CLASSES), "b3": (N_CLASSES,),
                  "norm_lo": (n,), "norm_hi": (n,)}
        for k, shape in shapes.items():
            if arrs[k].shape != shape:
                raise ValueError(f"classifier field {k} has shape {arrs[k].shape}, expected {shape}")
            if not np.isfinite(arrs[k]).all():
                raise ValueError(f"classifier field {k} contains non-finite values")
        return clf


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    decay: float = 0.95
    grad_steps: int = 2000
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_steps < 0:
            raise ValueError("grad_steps must be >= 0")


@dataclass(frozen=True)
class SampleBatch:
    """Labeled states; labels may carry one column per classified input dimension."""

    states: Array
    labels: Array

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", labels)
        if states.ndim != 2:
            raise ValueError("states must be a (N, n) array")
        if labels.shape[0] != states.shape[0]:
            raise ValueError("states and labels must have equal length")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be bits")

    def column(self, j: int) -> "SampleBatch":
        labels = self.labels if self.labels.ndim == 1 else self.labels[:, j]
        return SampleBatch(self.states, labels)


@dataclass(frozen=True)
class TrainMetrics:
    initial_error: float
    final_error: float
    loss_trace: Array


def init_mlp(input_dim: int, seed: int, normalizer=None) -> MlpClassifier:
    """Fresh classifier with all weights and biases i.i.d. Uniform[-0.1, 0.1]."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    if normalizer is None:
        lo = -np.ones(input_dim)
        hi = np.ones(input_dim)
    else:
        lo = np.asarray(normalizer[0], dtype=float)
        hi = np.asarray(normalizer[1], dtype=float)
    return MlpClassifier(
        w1=u(input_dim, HIDDEN), b1=u(HIDDEN),
        w2=u(HIDDEN, HIDDEN), b2=u(HIDDEN),
        w3=u(HIDDEN, N_CLASSES), b3=u(N_CLASSES),
        norm_lo=lo, norm_hi=hi,
    )


def _forward_hidden(clf: MlpClassifier, states: Array):
    x = clf.normalize(np.asarray(states, dtype=float))
    h1 = np.maximum(x @ clf.w1 + clf.b1, 0.0)
    h2 = np.maximum(h1 @ clf.w2 + clf.b2, 0.0)
    return x, h1, h2, h2 @ clf.w3 + clf.b3


def logits(clf: MlpClassifier, states: Array) -> Array:
    return _forward_hidden(clf, states)[3]


def probabilities(clf: MlpClassifier, states: Array) -> Array:
    z = logits(clf, states)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(clf: MlpClassifier, s) -> Array:
    """Probability pair (p_min_corner, p_max_corner) for one state."""
    s = np.asarray(s, dtype=float)
    if s.shape != (clf.input_dim,):
        raise ValueError(f"state has shape {s.shape}, expected ({clf.input_dim},)")
    return probabilities(clf, s[None, :])[0]


def decisions(clf: MlpClassifier, states: Array) -> Array:
    """Batched hard decisions; ties go to the max corner."""
    z = logits(clf, states)
    return z[:, 1] >= z[:, 0]


def classify(clf: MlpClassifier, s) -> int:
    """1 iff p_max_corner >= 0.5."""
    p = forward(clf, s)
    return int(p[1] >= p[0])


def cross_entropy_and_grads(clf: MlpClassifier, states: Array, labels: Array):
    """Mean cross-entropy loss and its gradients w.r.t. every parameter."""
    x, h1, h2, z = _forward_hidden(clf, states)
    labels = np.asarray(labels, dtype=int)
    n = states.shape[0]
    zs = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(zs).sum(axis=1))
    loss = float(np.mean(log_norm - zs[np.arange(n), labels]))

    p = np.exp(zs)
    p /= p.sum(axis=1, keepdims=True)
    dz = p
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    gw3 = h2.T @ dz
    gb3 = dz.sum(axis=0)
    dh2 = dz @ clf.w3.T
    dh2[h2 <= 0.0] = 0.0
    gw2 = h1.T @ dh2
    gb2 = dh2.sum(axis=0)
    dh1 = dh2 @ clf.w2.T
    dh1[h1 <= 0.0] = 0.0
    gw1 = x.T @ dh1
    gb1 = dh1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2, gw3, gb3)


def cross_entropy(clf: MlpClassifier, states: Array, labels: Array) -> float:
    return cross_entropy_and_grads(clf, states, labels)[0]


def _error_rate(clf: MlpClassifier, states: Array, labels: Array) -> float:
    if states.shape[0] == 0:
        return float("nan")
    return float(np.mean(decisions(clf, states) != labels.astype(bool)))


def train(clf: MlpClassifier, batch: SampleBatch, cfg: TrainConfig):
    """RMSprop training; returns (trained classifier, metrics on a 90/10 split).

    The split, mini-batch draws, and therefore the resulting parameters are a
    pure function of (clf, batch, cfg). The input classifier is not mutated.
    """
    if batch.states.shape[0] == 0:
        raise ValueError("cannot train on an empty batch")
    if batch.labels.ndim != 1:
        raise ValueError("train expects a single label column; use SampleBatch.column")
    if batch.states.shape[1] != clf.input_dim:
        raise ValueError("batch state dimension does not match the classifier")

    rng = np.random.default_rng(cfg.seed)
    n = batch.states.shape[0]
    perm = rng.permutation(n)
    n_held = n // 10
    held_idx, train_idx = perm[:n_held], perm[n_held:]
    if train_idx.size == 0:  # degenerate tiny batches: train on everything
        train_idx = perm
    # with an empty held-out split, report errors on the full batch instead
    err_states = batch.states[held_idx] if n_held else batch.states
    err_labels = batch.labels[held_idx] if n_held else batch.labels

    params = [p.copy() for p in clf.params()]
    vel = [np.zeros_like(p) for p in params]
    current = replace(clf, w1=params[0], b1=params[1], w2=params[2],
                      b2=params[3], w3=params[4], b3=params[5])
    initial_error = _error_rate(current, err_states, err_labels)
    trace = np.empty(cfg.grad_steps)

    xs = batch.states[train_idx]
    ys = batch.labels[train_idx].astype(int)
    for step in range(cfg.grad_steps):
        idx = rng.integers(0, xs.shape[0], size=cfg.batch_size)
        loss, grads = cross_entropy_and_grads(current, xs[idx], ys[idx])
        trace[step] = loss
        for p, v, g in zip(params, vel, grads):
            v *= cfg.decay
            v += (1.0 - cfg.decay) * g * g
            p -= cfg.learning_rate * g / (np.sqrt(v) + RMSPROP_EPS)

    final_error = _error_rate(current, err_states, err_labels)
    return current, TrainMetrics(initial_error, final_error, trace)
