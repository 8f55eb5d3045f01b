"""Confidence regularizers: values, logit gradients and closed-form minimizers.

Model regularizers (``mrl2``, ``mrent``, ``mrkld``) act on the network's
softmax output; the label regularizer (``lrent``) acts on soft pseudo-labels
and is solved in :mod:`crst.pseudo`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, check_prob_vector, entropy, log_softmax, softmax, xlogx

MR_KINDS = ("none", "mrl2", "mrent", "mrkld")
LR_KINDS = ("none", "lrent")

# Per-regularizer weights used for every experiment unless overridden.
DEFAULT_ALPHA = {"mrl2": 0.025, "mrent": 0.1, "mrkld": 0.1, "lrent": 0.25}


@dataclass(frozen=True)
class RegularizerSpec:
    """Which confidence regularizers are active, and their weights.

    A model regularizer and a label regularizer may be combined, each with its
    own weight (e.g. ``mrkld`` + ``lrent``).
    """

    mr: str = "none"
    alpha_mr: float = 0.0
    lr: str = "none"
    alpha_lr: float = 0.0

    def __post_init__(self):
        if self.mr not in MR_KINDS:
            raise ValueError(f"unknown model regularizer {self.mr!r}")
        if self.lr not in LR_KINDS:
            raise ValueError(f"unknown label regularizer {self.lr!r}")
        if self.alpha_mr < 0 or self.alpha_lr < 0:
            raise ValueError("regularizer weights must be nonnegative")

    @property
    def has_mr(self):
        return self.mr != "none" and self.alpha_mr > 0

    @property
    def has_lr(self):
        return self.lr != "none" and self.alpha_lr > 0

    @property
    def name(self):
        parts = [k for k, on in ((self.mr, self.has_mr), (self.lr, self.has_lr)) if on]
        return "+".join(parts) if parts else "cbst"

    @classmethod
    def from_name(cls, name, alpha=None, alpha_lr=None):
        """Build from ``"cbst"``, ``"mrkld"``, ``"lrent"``, ``"mrkld+lrent"``...

        Missing weights fall back to :data:`DEFAULT_ALPHA`.
        """
        mr, lr = "none", "none"
        for part in name.lower().split("+"):
            part = part.strip()
            if part in ("cbst", "none", ""):
                continue
            if part in MR_KINDS:
                mr = part
            elif part in LR_KINDS:
                lr = part
            else:
                raise ValueError(f"unknown regularizer {part!r}")
        a_mr = 0.0 if mr == "none" else DEFAULT_ALPHA[mr]
        a_lr = 0.0 if lr == "none" else DEFAULT_ALPHA[lr]
        if alpha is not None:
            if mr != "none":
                a_mr = alpha
            else:
                a_lr = alpha
        if alpha_lr is not None:
            a_lr = alpha_lr
        return cls(mr=mr, alpha_mr=float(a_mr), lr=lr, alpha_lr=float(a_lr))

    def with_alpha(self, alpha):
        """Replace the weight of the primary regularizer (MR if active, else LR)."""
        if self.mr != "none":
            return RegularizerSpec(self.mr, float(alpha), self.lr, self.alpha_lr)
        if self.lr != "none":
            return RegularizerSpec(self.mr, self.alpha_mr, self.lr, float(alpha))
        raise ValueError("no regularizer to weight")

    def to_dict(self):
        return {"mr": self.mr, "alpha_mr": self.alpha_mr, "lr": self.lr, "alpha_lr": self.alpha_lr}


NONE = RegularizerSpec()


def mr_value(kind, p):
    """Model regularizer value per row of ``p``.

    ``mrkld`` is the KL divergence from uniform up to its constant,
    ``-sum(log p)/K``; any zero entry gives ``inf`` rather than an error.
    """
    p = check_prob_vector(p)
    K = p.shape[-1]
    if kind == "mrl2":
        return np.sum(p * p, axis=-1)
    if kind == "mrent":
        return np.sum(xlogx(p), axis=-1)
    if kind == "mrkld":
        with np.errstate(divide="ignore"):
            return -np.sum(np.log(p), axis=-1) / K
    if kind == "none":
        return np.zeros(p.shape[:-1])
    raise ValueError(f"unknown model regularizer {kind!r}")


def mr_value_from_logits(kind, z):
    """Same as :func:`mr_value` but stable for extreme logits (used in training)."""
    z = np.asarray(z, dtype=np.float64)
    if kind == "mrkld":
        return -np.mean(log_softmax(z), axis=-1)
    if kind == "mrent":
        return np.sum(softmax(z) * log_softmax(z), axis=-1)
    return mr_value(kind, softmax(z))


def mr_grad_logits(kind, p):
    """Gradient of the regularizer w.r.t. the softmax logits, from ``p`` alone.

    mrl2:  2 * sum_k p_k^2 (delta_ki - p_i)
    mrent: p_i (log p_i + H(p))
    mrkld: p_i - 1/K
    """
    p = check_prob_vector(p)
    K = p.shape[-1]
    if kind == "mrl2":
        s = np.sum(p * p, axis=-1, keepdims=True)
        return 2.0 * (p * p - s * p)
    if kind == "mrent":
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
        return p * (logp + entropy(p)[..., None])
    if kind == "mrkld":
        if np.any(p <= 0):
            raise DomainError("mrkld gradient needs strictly positive probabilities")
        return p - 1.0 / K
    if kind == "none":
        return np.zeros_like(p)
    raise ValueError(f"unknown model regularizer {kind!r}")


def _check_one_hot(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 2 or np.count_nonzero(y) != 1 or y.max() != 1.0:
        raise DomainError("expected a one-hot label")
    return y


def smoothed_label(hard, alpha, K=None):
    """Uniformly smoothed version of a one-hot label.

    Smoothing weight is ``eps = (K*alpha - alpha) / (K + K*alpha)``: the hot
    entry becomes ``1 - eps`` and the rest ``alpha / (K + K*alpha)``.
    """
    hard = _check_one_hot(hard)
    K = hard.size if K is None else K
    if K != hard.size:
        raise DomainError("K does not match the label length")
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    if alpha == 0:
        return hard.copy()
    off = alpha / (K + K * alpha)
    eps = (K * alpha - alpha) / (K + K * alpha)
    return np.where(hard == 1.0, 1.0 - eps, off)


def mrkld_closed_form_minimizer(y, alpha):
    """Global minimizer of ``-sum y log p + alpha * mrkld(p)`` over the simplex."""
    y = _check_one_hot(y)
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    return (y + alpha / y.size) / (1.0 + alpha)


def mrkld_regularized_ce(p, y, alpha):
    """Single-sample cross-entropy plus ``alpha`` times the mrkld term."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(p)
    return -np.sum(np.where(y > 0, y * logp, 0.0)) - alpha * np.mean(logp)


def verify_prop4(model, source, target, alpha):
    """Check that mrkld retraining equals smoothed-label retraining.

    Returns ``|L_A - (1 + alpha) * L_B|`` where ``L_A`` is the mrkld-regularized
    loss from the training code path and ``L_B`` is computed independently:
    source cross-entropy scaled by ``1/(1+alpha)`` plus target cross-entropy
    against uniformly smoothed labels.
    """
    from .model import forward, loss_and_grad

    yt = np.asarray(target.labels, dtype=np.float64)
    if not np.all([np.count_nonzero(r) == 1 and r.max() == 1.0 for r in yt]):
        raise DomainError("target labels must be one-hot")
    spec = RegularizerSpec(mr="mrkld", alpha_mr=alpha) if alpha > 0 else NONE
    L_A, _ = loss_and_grad(model, source, target, spec)

    zs, _ = forward(model, source.inputs)
    zt, _ = forward(model, target.inputs)
    smoothed = np.array([smoothed_label(r, alpha) for r in yt])
    src = -np.sum(source.labels * log_softmax(zs))
    tgt = -np.sum(smoothed * log_softmax(zt))
    L_B = src / (1.0 + alpha) + tgt
    return abs(L_A - (1.0 + alpha) * L_B)


def verify_prop5(p):
    """Reverse-KL regularizer versus the negative-entropy regularizer.

    Returns ``(value_gap, grad_gap)``: ``KL(p || u) - sum p log p`` (which is
    log K) and the difference of their logit gradients (which is zero). The
    reverse-KL gradient is formed as ``J^T grad_p`` with the softmax Jacobian,
    independently of the closed-form mrent gradient.
    """
    p = check_prob_vector(p)
    if np.any(p <= 0):
        raise DomainError("p must be strictly positive")
    K = p.shape[-1]
    g = np.log(K * p) + 1.0
    kl = np.sum(p * np.log(K * p), axis=-1)
    neg_ent = np.sum(p * np.log(p), axis=-1)
    kl_grad = p * (g - np.sum(p * g, axis=-1, keepdims=True))
    return kl - neg_ent, kl_grad - mr_grad_logits("mrent", p)


def binary_loss_curve(kind, alpha, grid, y=1.0, p=0.9):
    """Regularized binary cross-entropy evaluated on a grid.

    For model regularizers the grid is over the prediction ``p`` with label
    ``y``; for ``lrent`` it is over the label ``y`` with prediction ``p`` fixed.
    Returns an ``(n, 2)`` array of (grid value, loss).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise DomainError("grid must lie strictly inside (0, 1)")
    if kind == "lrent":
        ys = grid
        loss = -ys * np.log(p) - (1 - ys) * np.log(1 - p) + alpha * (xlogx(ys) + xlogx(1 - ys))
    else:
        probs = np.stack([grid, 1 - grid], axis=-1)
        ce = -y * np.log(grid) - (1 - y) * np.log(1 - grid)
        loss = ce + alpha * mr_value(kind, probs)
    return np.column_stack([grid, loss])
