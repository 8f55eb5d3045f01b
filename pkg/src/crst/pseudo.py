"""Pseudo-label generation for the target domain.

A pseudo-label is a point of the simplex or the zero vector; the zero vector
means the sample is not selected for retraining this round. Single-sample
solvers return plain arrays (zeros for unselected); batch generation returns a
:class:`PseudoLabels` matrix.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, softmax, xlogx
from .model import forward
from .regularizers import NONE

# Floor for probabilities entering log(p / lambda).
P_FLOOR = 1e-12


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    """Per-class confidence thresholds and the portion that produced them."""

    lam: np.ndarray
    portion: float

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        if np.any(lam <= 0) or np.any(lam > 1):
            raise DomainError("thresholds must lie in (0, 1]")
        object.__setattr__(self, "lam", lam)

    @classmethod
    def equal(cls, K, value=0.5):
        return cls(np.full(K, value), 1.0)


@dataclass
class PseudoLabels:
    """``(N, K)`` label matrix for a target set; zero rows are unselected."""

    labels: np.ndarray

    @property
    def selected(self):
        return self.labels.sum(axis=1) > 0

    @property
    def assigned(self):
        """Argmax class of each selected row, -1 for unselected."""
        return np.where(self.selected, np.argmax(self.labels, axis=1), -1)

    def counts(self):
        K = self.labels.shape[1]
        a = self.assigned
        return np.bincount(a[a >= 0], minlength=K)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def none_selected(cls, N, K):
        return cls(np.zeros((N, K)))


def _rank(portion, n):
    # ceil with slack for products like 0.3 * 10 = 3.0000000000000004
    return max(1, math.ceil(portion * n - 1e-9))


def determine_lambdas(probs, portion):
    """Class-balanced thresholds from a single portion ``p``.

    For class k, the confidences (max softmax) of samples predicted as k are
    sorted in descending order and ``lambda_k`` is the value at rank
    ``ceil(p * N_k)``. Classes nobody predicts get ``lambda_k = 1``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise DomainError("need a nonempty (N, K) probability matrix")
    if not 0 < portion <= 1:
        raise DomainError("portion must be in (0, 1]")
    K = probs.shape[1]
    pred = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    lam = np.ones(K)
    for k in range(K):
        ck = np.sort(conf[pred == k])[::-1]
        if ck.size:
            lam[k] = ck[_rank(portion, ck.size) - 1]
    # a degenerate output can yield confidence 0 only if K is huge; keep lam valid
    lam = np.clip(lam, P_FLOOR, 1.0)
    return Thresholds(lam, float(portion))


def hard_pseudo_label(p, th):
    """Global minimizer of the class-balanced single-sample cost.

    One-hot at ``k* = argmax_c p_c / lambda_c`` when ``p_k* >= lambda_k*``,
    otherwise the zero vector. Works row-wise on ``(N, K)`` inputs.
    """
    p = np.asarray(p, dtype=np.float64)
    ratio = p / th.lam
    k = np.argmax(ratio, axis=-1)
    pk = np.take_along_axis(p, k[..., None], axis=-1)[..., 0]
    lk = th.lam[k]
    out = np.zeros_like(p)
    np.put_along_axis(out, k[..., None], 1.0, axis=-1)
    return np.where((pk >= lk)[..., None], out, 0.0)


def _log_ratio(p, th):
    return np.log(np.maximum(np.asarray(p, dtype=np.float64), P_FLOOR)) - np.log(th.lam)


def lrent_soft_label(p, th, alpha):
    """Entropy-regularized soft label, normalized ``(p_k / lambda_k)^(1/alpha)``.

    Computed in log space as a softmax of ``log(p / lambda) / alpha``.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive; use hard_pseudo_label for alpha = 0")
    return softmax(_log_ratio(p, th) / alpha)


def selection_cost(yhat, p, th, alpha):
    """Single-sample cost ``-sum yhat log(p/lambda) + alpha sum yhat log yhat``."""
    yhat = np.asarray(yhat, dtype=np.float64)
    return -np.sum(yhat * _log_ratio(p, th), axis=-1) + alpha * np.sum(xlogx(yhat), axis=-1)


def lrent_pseudo_label(p, th, alpha):
    """Soft label if its cost beats the zero vector's (which is 0), else zeros."""
    y = lrent_soft_label(p, th, alpha)
    cost = selection_cost(y, p, th, alpha)
    return np.where((cost < 0)[..., None], y, 0.0)


def kkt_oracle(p, th, alpha, step=0.5, max_iter=100_000, tol=1e-13):
    """Minimize the entropy-regularized labeling cost over the simplex numerically.

    Exponentiated-gradient (mirror descent) iterations on the convex objective
    ``-y.log(p/lambda) + alpha * y.log(y)``; the iterates stay strictly inside
    the simplex. The step is capped at ``1/alpha`` (scaled by ``step``) since the
    log-space update contracts by ``|1 - step*alpha|`` and diverges beyond 2/alpha.

    ``p`` may be a batch of rows; ``alpha`` a scalar or one value per row.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    r = _log_ratio(p, th)
    a = alpha[..., None] if alpha.ndim else alpha
    eta = step * np.minimum(1.0, 1.0 / a)
    logy = np.full(r.shape, -np.log(r.shape[-1]))
    for _ in range(max_iter):
        grad = -r + a * (logy + 1.0)
        new = logy - eta * grad
        new -= np.max(new, axis=-1, keepdims=True)
        new -= np.log(np.sum(np.exp(new), axis=-1, keepdims=True))
        done = np.max(np.abs(new - logy)) < tol
        logy = new
        if done:
            return np.exp(logy)
    raise ConvergenceError(f"kkt_oracle did not converge in {max_iter} iterations")


def generate_pseudo_labels(model, inputs, th, reg=NONE):
    """Step a): labels for every target row against a fixed model."""
    _, probs = forward(model, inputs)
    if reg.has_lr:
        return PseudoLabels(lrent_pseudo_label(probs, th, reg.alpha_lr))
    return PseudoLabels(hard_pseudo_label(probs, th))


def dump_pseudo_labels(path, labels, probs):
    """CSV: index, selected, y0..y{K-1}, confidence, assigned class (-1 if unselected)."""
    K = labels.labels.shape[1]
    conf = np.asarray(probs).max(axis=1)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "selected"] + [f"y{k}" for k in range(K)] + ["confidence", "assigned"])
        for i, (row, sel, a) in enumerate(zip(labels.labels, labels.selected, labels.assigned)):
            w.writerow([i, int(sel)] + [repr(float(v)) for v in row] + [repr(float(conf[i])), int(a)])

