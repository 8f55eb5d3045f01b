"""Small softmax classifiers with hand-written backprop.

Two architectures: ``linear`` (affine map + softmax) and ``hidden`` (one tanh
hidden layer). Parameters live in a flat dict keyed ``W0, b0[, W1, b1]``;
gradients use the same keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import log_softmax, make_rng, softmax
from .regularizers import NONE, RegularizerSpec, mr_grad_logits, mr_value_from_logits

ARCHS = ("linear", "hidden")
CHECKPOINT_MAGIC = "crst-classifier"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Classifier:
    arch: str
    input_dim: int
    n_classes: int
    hidden: int
    params: dict = field(repr=False)

    @property
    def param_names(self):
        return ("W0", "b0") if self.arch == "linear" else ("W0", "b0", "W1", "b1")

    def replace_params(self, params):
        return Classifier(self.arch, self.input_dim, self.n_classes, self.hidden, params)


@dataclass
class LabeledBatch:
    """Inputs with one label row each; zero rows mark unselected samples."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("inputs and labels must be 2-D")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels have different row counts")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return LabeledBatch(self.inputs[idx], self.labels[idx])

    @classmethod
    def empty(cls, input_dim, K):
        return cls(np.zeros((0, input_dim)), np.zeros((0, K)))


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.batch_size < 1:
            raise ValueError("invalid weight decay or batch size")


def init(arch, input_dim, n_classes, hidden=16, seed=0):
    """Random classifier; weights ~ N(0, 1/fan_in), biases zero."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}")
    if input_dim < 1 or n_classes < 2 or (arch == "hidden" and hidden < 1):
        raise ValueError("invalid dimensions")
    rng = make_rng(seed, "init")
    if arch == "linear":
        params = {
            "W0": rng.standard_normal((input_dim, n_classes)) / np.sqrt(input_dim),
            "b0": np.zeros(n_classes),
        }
        hidden = 0
    else:
        params = {
            "W0": rng.standard_normal((input_dim, hidden)) / np.sqrt(input_dim),
            "b0": np.zeros(hidden),
            "W1": rng.standard_normal((hidden, n_classes)) / np.sqrt(hidden),
            "b1": np.zeros(n_classes),
        }
    return Classifier(arch, input_dim, n_classes, hidden, params)


def _forward_cache(m, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise ValueError(f"expected inputs of width {m.input_dim}, got shape {X.shape}")
    P = m.params
    if m.arch == "linear":
        return X @ P["W0"] + P["b0"], None
    h = np.tanh(X @ P["W0"] + P["b0"])
    return h @ P["W1"] + P["b1"], h


def forward(m, X):
    """Logits and softmax probabilities, one row per input row."""
    z, _ = _forward_cache(m, X)
    return z, softmax(z)


def predict(m, X):
    return np.argmax(forward(m, X)[1], axis=1)


def _backward(m, X, h, G):
    """Parameter gradients given dLoss/dlogits ``G``."""
    P = m.params
    if m.arch == "linear":
        return {"W0": X.T @ G, "b0": G.sum(axis=0)}
    dh = (G @ P["W1"].T) * (1.0 - h * h)
    return {"W1": h.T @ G, "b1": G.sum(axis=0), "W0": X.T @ dh, "b0": dh.sum(axis=0)}


def loss_and_grad(m, source, target, reg=NONE, reduction="sum"):
    """Regularized cross-entropy over a source batch and a pseudo-labeled target batch.

    loss = -sum_s y.log p  -  sum_t [yhat.log p - alpha_mr * r(p)]

    The model regularizer is applied to target rows with a nonzero label only;
    unselected (zero) rows contribute nothing. The label regularizer does not
    depend on the weights and is ignored here. ``reduction="mean"`` divides by
    the total row count.
    """
    if reg.alpha_mr < 0 or reg.alpha_lr < 0:
        raise ValueError("negative regularizer weight")
    X = np.concatenate([source.inputs, target.inputs])
    Y = np.concatenate([source.labels, target.labels])
    if Y.shape[1] != m.n_classes:
        raise ValueError("label width does not match the classifier")
    z, h = _forward_cache(m, X)
    logp = log_softmax(z)
    p = np.exp(logp)
    row_mass = Y.sum(axis=1, keepdims=True)
    loss = -np.sum(Y * logp)
    G = row_mass * p - Y
    if reg.has_mr:
        ns = len(source)
        active = np.zeros(len(X), dtype=bool)
        active[ns:] = row_mass[ns:, 0] > 0
        if np.any(active):
            loss += reg.alpha_mr * np.sum(mr_value_from_logits(reg.mr, z[active]))
            G[active] += reg.alpha_mr * mr_grad_logits(reg.mr, p[active])
    grads = _backward(m, X, h, G)
    if reduction == "mean":
        n = max(len(X), 1)
        loss /= n
        grads = {k: g / n for k, g in grads.items()}
    return float(loss), grads


def sgd_step(m, grads, cfg, velocity=None):
    """One momentum-SGD step with decoupled weight decay on weight matrices.

    v <- momentum * v + g;  w <- w - lr * v - lr * weight_decay * w  (biases skip
    the decay term). Returns ``(new_model, new_velocity)``.
    """
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in m.params.items()}
    new_params, new_vel = {}, {}
    for k, w in m.params.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        v = cfg.momentum * velocity[k] + g
        step = cfg.lr * v
        if k.startswith("W") and cfg.weight_decay:
            step = step + cfg.lr * cfg.weight_decay * w
        new_params[k] = w - step
        new_vel[k] = v
    return m.replace_params(new_params), new_vel


def save_checkpoint(m, path):
    """Text checkpoint: header lines then one line per parameter in row-major
    order, every value written with ``float.hex`` so loading is bit-exact."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"arch {m.arch}",
        f"dims {m.input_dim} {m.n_classes} {m.hidden}",
    ]
    for k in m.param_names:
        a = m.params[k]
        shape = "x".join(str(s) for s in a.shape)
        vals = " ".join(float(v).hex() for v in a.ravel(order="C"))
        lines.append(f"{k} {shape} {vals}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    magic, version = lines[0].split()
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"not a version-{CHECKPOINT_VERSION} classifier checkpoint")
    arch = lines[1].split()[1]
    d, K, hidden = (int(t) for t in lines[2].split()[1:])
    params = {}
    for line in lines[3:]:
        name, shape, *vals = line.split()
        dims = tuple(int(s) for s in shape.split("x"))
        params[name] = np.array([float.fromhex(v) for v in vals]).reshape(dims)
    return Classifier(arch, d, K, hidden, params)
