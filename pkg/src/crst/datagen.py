"""Synthetic two-domain Gaussian data with covariate shift, and a CSV format.

CSV layout: header ``f0,...,f{d-1},label``; ``label`` is a class index in
``[0, K)`` or ``-1`` for an unlabeled row. Floats are written with ``repr``
so a save/load round trip is exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import make_rng, one_hot
from .model import LabeledBatch


class CSVFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Class-conditional isotropic Gaussians plus a target-domain shift.

    The target applies, in order: rotation of the class means about their
    centroid (in the plane of the first two features), translation, and a
    multiplier on the spread. ``means=None`` places the class means on a
    regular polygon of radius ``radius``.
    """

    n_classes: int = 3
    dim: int = 2
    spread: float = 1.0
    radius: float = 2.5
    means: tuple | None = None
    rotation: float = np.deg2rad(30.0)
    translation: tuple = (0.5, -0.3)
    spread_mult: float = 1.3
    n_per_class: int = 200
    label_noise: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 2:
            raise ValueError("need K >= 2 classes and dim >= 2")
        if not self.spread > 0 or not self.spread_mult > 0:
            raise ValueError("spread must be positive")
        if not 0 <= self.label_noise < 1:
            raise ValueError("label noise must be in [0, 1)")
        if len(self.translation) != self.dim:
            raise ValueError("translation length must equal dim")
        if self.means is not None and np.shape(self.means) != (self.n_classes, self.dim):
            raise ValueError("means must be K x dim")
        if self.n_per_class < 1:
            raise ValueError("need at least one sample per class")

    def source_means(self):
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        ang = 2 * np.pi * np.arange(self.n_classes) / self.n_classes
        mu = np.zeros((self.n_classes, self.dim))
        mu[:, 0] = self.radius * np.cos(ang)
        mu[:, 1] = self.radius * np.sin(ang)
        return mu

    def target_means(self):
        mu = self.source_means()
        c = mu.mean(axis=0)
        rot = np.eye(self.dim)
        cs, sn = np.cos(self.rotation), np.sin(self.rotation)
        rot[:2, :2] = [[cs, -sn], [sn, cs]]
        return (mu - c) @ rot.T + c + np.asarray(self.translation, dtype=np.float64)

    def to_dict(self):
        return {
            "n_classes": self.n_classes,
            "dim": self.dim,
            "spread": self.spread,
            "radius": self.radius,
            "means": None if self.means is None else [list(m) for m in self.means],
            "rotation": float(self.rotation),
            "translation": list(self.translation),
            "spread_mult": self.spread_mult,
            "n_per_class": self.n_per_class,
            "label_noise": self.label_noise,
        }


TWO_BLOBS_ROTATED = DomainSpec()


def generate(spec, seed):
    """Draw ``(source, target_inputs, target_truth)``.

    Rows are ordered by class. Source labels are one-hot after flipping a
    ``label_noise`` fraction (per sample, uniformly to another class); target
    truth is returned for evaluation only.
    """
    rng = make_rng(seed, "data")
    K, d, n = spec.n_classes, spec.dim, spec.n_per_class
    mu_s, mu_t = spec.source_means(), spec.target_means()
    truth_s = np.repeat(np.arange(K), n)
    xs = mu_s[truth_s] + spec.spread * rng.standard_normal((K * n, d))
    truth_t = np.repeat(np.arange(K), n)
    xt = mu_t[truth_t] + spec.spread * spec.spread_mult * rng.standard_normal((K * n, d))
    flip = rng.random(K * n) < spec.label_noise
    shift = rng.integers(1, K, size=K * n)
    noisy = np.where(flip, (truth_s + shift) % K, truth_s)
    return LabeledBatch(xs, one_hot(noisy, K)), xt, truth_t


def save_csv(path, inputs, labels=None):
    """Write rows; ``labels`` are class indices (-1 = unlabeled) or one-hot rows."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if labels is None:
        labels = np.full(len(inputs), -1)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.where(labels.sum(axis=1) > 0, labels.argmax(axis=1), -1)
    d = inputs.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(d)] + ["label"])
        for row, lab in zip(inputs, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path, n_classes=None):
    """Read ``(inputs, labels)``; labels are ints with -1 for unlabeled rows.

    Raises :class:`CSVFormatError` naming the offending line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(f"{path}: line 1: empty file")
    header = rows[0]
    d = len(header) - 1
    expected = [f"f{j}" for j in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise CSVFormatError(f"{path}: line 1: expected header {','.join(expected)}")
    X = np.empty((len(rows) - 1, d))
    y = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != d + 1:
            raise CSVFormatError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            X[i] = [float(v) for v in row[:d]]
            y[i] = int(row[d])
        except ValueError as exc:
            raise CSVFormatError(f"{path}: line {lineno}: {exc}") from None
        if y[i] < -1 or (n_classes is not None and y[i] >= n_classes):
            raise CSVFormatError(f"{path}: line {lineno}: label {y[i]} out of range")
    return X, y


def split_labeled(X, y, n_classes):
    """Labeled rows as a one-hot :class:`LabeledBatch`, plus the unlabeled inputs."""
    lab = y >= 0
    return LabeledBatch(X[lab], one_hot(y[lab], n_classes)), X[~lab]
