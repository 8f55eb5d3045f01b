"""Evaluation metrics: accuracy, confusion matrices and confidence statistics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def accuracy(preds, truth, K=None):
    """Per-class accuracy and their unweighted mean.

    Classes absent from ``truth`` get NaN and are left out of the mean.
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError("preds and truth differ in length")
    if truth.size == 0:
        raise ValueError("empty input")
    K = int(max(preds.max(), truth.max()) + 1) if K is None else K
    counts = np.bincount(truth, minlength=K).astype(float)
    correct = np.bincount(truth[preds == truth], minlength=K).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, correct / counts, np.nan)
    return per_class, float(np.nanmean(per_class))


def confusion(preds, truth, K, normalize=False):
    """Entry (i, j) counts samples of true class i predicted as j.

    With ``normalize=True`` every nonempty row is divided by its sum.
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if np.any((preds < 0) | (preds >= K)) or np.any((truth < 0) | (truth >= K)):
        raise ValueError("class index out of range")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    if not normalize:
        return cm
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros((K, K)), where=rows > 0)


@dataclass
class ConfidenceStats:
    """Per-class mean confidence of true and false positives.

    Undefined entries (empty groups) are NaN in the arrays and ``None`` in
    :meth:`to_dict`; the means skip them.
    """

    c_tp: np.ndarray
    c_fp: np.ndarray
    ratio: np.ndarray

    @property
    def mean_tp(self):
        return _nanmean(self.c_tp)

    @property
    def mean_fp(self):
        return _nanmean(self.c_fp)

    @property
    def mean_ratio(self):
        return _nanmean(self.ratio)

    def to_dict(self):
        return {
            "c_tp": _listify(self.c_tp),
            "c_fp": _listify(self.c_fp),
            "ratio": _listify(self.ratio),
            "mean_tp": self.mean_tp,
            "mean_fp": self.mean_fp,
            "mean_ratio": self.mean_ratio,
        }


def _nanmean(a):
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else None


def _listify(a):
    return [None if np.isnan(v) else float(v) for v in a]


def confidence_stats(probs, truth):
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth)
    if len(probs) != len(truth):
        raise ValueError("probs and truth differ in length")
    K = probs.shape[1]
    pred = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    c_tp = np.full(K, np.nan)
    c_fp = np.full(K, np.nan)
    for k in range(K):
        mine = pred == k
        tp = mine & (truth == k)
        fp = mine & (truth != k)
        if tp.any():
            c_tp[k] = conf[tp].mean()
        if fp.any():
            c_fp[k] = conf[fp].mean()
    return ConfidenceStats(c_tp, c_fp, c_tp / c_fp)


def confidence_histogram(probs, bins=10):
    """Histogram of every softmax entry over ``[0, 1]``; returns (edges, counts)."""
    if bins < 2:
        raise ValueError("need at least two bins")
    counts, edges = np.histogram(np.asarray(probs).ravel(), bins=bins, range=(0.0, 1.0))
    return edges, counts


def write_histogram_csv(path, edges, counts):
    mid = 0.5 * (edges[:-1] + edges[1:])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_mid", "count"])
        for m, c in zip(mid, counts):
            w.writerow([repr(float(m)), int(c)])


def snapshot(probs, truth):
    """Metrics dict for one evaluation of the target set."""
    K = probs.shape[1]
    pred = np.argmax(probs, axis=1)
    per_class, mean = accuracy(pred, truth, K)
    return {
        "mean_accuracy": mean,
        "per_class_accuracy": _listify(per_class),
        "overall_accuracy": float(np.mean(pred == truth)),
        "confidence": confidence_stats(probs, truth).to_dict(),
        "confusion": confusion(pred, truth, K).tolist(),
    }
