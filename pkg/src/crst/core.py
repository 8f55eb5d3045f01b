"""Numerically stable primitives shared across the package.

All functions operate on the last axis, so a single vector of length K and an
``(N, K)`` batch are handled the same way.
"""
from __future__ import annotations

import numpy as np

PROB_TOL = 1e-9

# Stream ids for ``make_rng``. Each named consumer draws from its own child of
# the experiment seed, so adding draws in one place never shifts another.
STREAMS = {"data": 0, "init": 1, "shuffle": 2, "selftrain": 3, "verify": 4}


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


def _finite(z, name="input"):
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError(f"{name} must be finite")
    return z


def logsumexp(z, axis=-1):
    """log(sum(exp(z))) along ``axis`` with max subtraction."""
    z = _finite(z, "logits")
    m = np.max(z, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_softmax(z):
    z = _finite(z, "logits")
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z):
    """Row-wise softmax of a logit vector or matrix.

    Shift invariant: adding a constant to every logit leaves the output
    unchanged.

    >>> softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    z = _finite(z, "logits")
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_with_temperature(z, alpha):
    """Softmax of ``z / alpha``; ``alpha > 1`` smooths, ``alpha < 1`` sharpens."""
    if not alpha > 0:
        raise DomainError(f"temperature must be positive, got {alpha}")
    return softmax(np.asarray(z, dtype=np.float64) * (1.0 / alpha))


def xlogx(p):
    """Elementwise p*log(p) with 0*log(0) = 0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def entropy(p):
    """Shannon entropy in nats, using 0*log(0) = 0."""
    return -np.sum(xlogx(p), axis=-1)


def is_prob_vector(p, tol=PROB_TOL):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        return False
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


def check_prob_vector(p, tol=PROB_TOL, allow_zero=False):
    """Validate probability rows, optionally accepting all-zero rows.

    Returns the input as a float array.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise DomainError("need at least two classes")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("probabilities must be finite and nonnegative")
    s = p.sum(axis=-1)
    ok = np.abs(s - 1.0) <= tol
    if allow_zero:
        ok |= s == 0
    if not np.all(ok):
        raise DomainError("probability rows must sum to 1")
    return p


def uniform(K):
    return np.full(K, 1.0 / K)


def one_hot(idx, K):
    idx = np.asarray(idx)
    out = np.zeros(idx.shape + (K,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def make_rng(seed, stream):
    """Seeded PCG64 generator for one named stream of an experiment seed.

    The child is ``SeedSequence(seed, spawn_key=(STREAMS[stream],))``, so the
    same (seed, stream) pair yields the same draws on every platform.
    """
    key = STREAMS[stream] if isinstance(stream, str) else int(stream)
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))
