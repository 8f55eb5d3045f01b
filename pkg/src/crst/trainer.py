"""Alternating self-training: pseudo-label generation (step a) and retraining (step b).

Each round recomputes the class-balanced thresholds on the current model, then
records the objective at three points: before step a (previous labels, new
thresholds), after step a, and after step b.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .core import log_softmax, make_rng, xlogx
from .metrics import snapshot
from .pseudo import PseudoLabels, Thresholds, determine_lambdas, generate_pseudo_labels
from .regularizers import NONE, RegularizerSpec, mr_value_from_logits


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 3
    epochs_per_round: int = 2
    p0: float = 0.20
    dp: float = 0.05
    reg: RegularizerSpec = NONE
    sgd: M.SgdConfig = M.SgdConfig()
    # None reuses ``sgd`` for the self-training rounds
    selftrain_sgd: M.SgdConfig | None = None
    pretrain_epochs: int = 30
    arch: str = "hidden"
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0 or self.epochs_per_round < 0 or self.pretrain_epochs < 0:
            raise ValueError("rounds and epochs must be nonnegative")
        if self.rounds and not (0 < self.p0 and self.p0 + (self.rounds - 1) * self.dp <= 1 + 1e-12):
            raise ValueError("portion schedule leaves (0, 1]")

    def portion(self, r):
        # rounded so the schedule reads 0.2, 0.25, 0.3 rather than 0.30000000000000004
        return min(1.0, round(self.p0 + r * self.dp, 12))


@dataclass
class History:
    """Measurement records, one dict per point (baseline, then 3 per round)."""

    records: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    step_a_probs: list = field(default_factory=list)
    model: M.Classifier | None = None

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def summary_rows(self):
        rows = []
        for rec in self.records:
            rows.append({
                "round": rec["round"],
                "point": rec["point"],
                "portion": rec.get("portion"),
                "selected": "|".join(str(c) for c in rec.get("selected_counts", [])),
                "L_CB": rec.get("L_CB"),
                "L_CR": rec.get("L_CR"),
                "mean_accuracy": (rec.get("metrics") or {}).get("mean_accuracy"),
            })
        return rows

    def to_summary_csv(self, path):
        cols = ["round", "point", "portion", "selected", "L_CB", "L_CR", "mean_accuracy"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in self.summary_rows():
                w.writerow({k: _fmt(v) for k, v in row.items()})

    def points(self, name):
        return [r for r in self.records if r["point"] == name]

    @property
    def final(self):
        return self.records[-1]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def objective(m, source, target_inputs, labels, th, reg=NONE):
    """Full-batch ``(L_CB, L_CR)`` for the current model and pseudo-labels.

    L_CB = source CE - sum_t yhat . log(p / lambda)
    L_CR = L_CB + alpha_lr * sum_t yhat . log(yhat) + alpha_mr * sum_t r(p_t)

    The model-regularizer term runs over every target sample, so it does not
    depend on the labels and step a can only lower L_CR.
    """
    Y = labels.labels if isinstance(labels, PseudoLabels) else np.asarray(labels, dtype=np.float64)
    if len(Y) != len(target_inputs):
        raise ValueError("labels are not aligned with the target samples")
    zs, _ = M.forward(m, source.inputs)
    zt, _ = M.forward(m, target_inputs)
    src = -np.sum(source.labels * log_softmax(zs))
    tgt = -np.sum(Y * (log_softmax(zt) - np.log(th.lam)))
    L_CB = float(src + tgt)
    L_CR = L_CB
    if reg.has_lr:
        L_CR += reg.alpha_lr * float(np.sum(xlogx(Y)))
    if reg.has_mr:
        L_CR += reg.alpha_mr * float(np.sum(mr_value_from_logits(reg.mr, zt)))
    return L_CB, float(L_CR)


def train_epochs(m, data, reg, sgd, epochs, rng):
    """Mini-batch momentum SGD over ``data`` (source rows then target rows).

    The union is shuffled once per epoch; each batch's loss is averaged over
    its rows. ``data`` is ``(source, target)``.
    """
    source, target = data
    X = np.concatenate([source.inputs, target.inputs])
    Y = np.concatenate([source.labels, target.labels])
    is_tgt = np.r_[np.zeros(len(source), bool), np.ones(len(target), bool)]
    n = len(X)
    vel = None
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, sgd.batch_size):
            idx = order[start:start + sgd.batch_size]
            s_idx = idx[~is_tgt[idx]]
            t_idx = idx[is_tgt[idx]]
            src_b = M.LabeledBatch(X[s_idx], Y[s_idx])
            tgt_b = M.LabeledBatch(X[t_idx], Y[t_idx])
            _, g = M.loss_and_grad(m, src_b, tgt_b, reg, reduction="mean")
            m, vel = M.sgd_step(m, g, sgd, vel)
    return m


def full_batch_descent(m, source, target_inputs, labels, reg, lr, steps):
    """Plain gradient descent on the whole retraining loss; yields the model after each step.

    Every target row is kept, so with a small enough ``lr`` the loss is
    non-increasing.
    """
    tgt = M.LabeledBatch(target_inputs, labels.labels)
    cfg = M.SgdConfig(lr=lr, momentum=0.0, weight_decay=0.0, batch_size=1)
    for _ in range(steps):
        _, g = M.loss_and_grad(m, source, tgt, reg)
        m, _ = M.sgd_step(m, g, cfg)
        yield m


def pretrain(cfg, source, input_dim=None, n_classes=None):
    """Source-only model; deterministic given ``cfg.seed``."""
    d = source.inputs.shape[1] if input_dim is None else input_dim
    K = source.labels.shape[1] if n_classes is None else n_classes
    m = M.init(cfg.arch, d, K, cfg.hidden, cfg.seed)
    if cfg.pretrain_epochs == 0:
        return m
    rng = make_rng(cfg.seed, "shuffle")
    return train_epochs(m, (source, M.LabeledBatch.empty(d, K)), NONE, cfg.sgd, cfg.pretrain_epochs, rng)


def _record(m, source, target_inputs, truth, labels, th, reg, rnd, point):
    L_CB, L_CR = objective(m, source, target_inputs, labels, th, reg)
    rec = {
        "round": rnd,
        "point": point,
        "portion": th.portion,
        "lambdas": [float(v) for v in th.lam],
        "selected_counts": [int(c) for c in labels.counts()],
        "n_selected": int(labels.selected.sum()),
        "L_CB": L_CB,
        "L_CR": L_CR,
    }
    _, probs = M.forward(m, target_inputs)
    rec["predicted_counts"] = [int(c) for c in np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])]
    if truth is not None:
        rec["metrics"] = snapshot(probs, truth)
    return rec


def run_round(m, source, target_inputs, cfg, r, prev_labels, rng, truth=None):
    """One self-training round; returns ``(model, labels, [3 records])``."""
    if r >= cfg.rounds:
        raise ValueError("round index beyond the configured number of rounds")
    reg = cfg.reg
    _, probs = M.forward(m, target_inputs)
    th = determine_lambdas(probs, cfg.portion(r))
    recs = [_record(m, source, target_inputs, truth, prev_labels, th, reg, r, "before_a")]

    labels = generate_pseudo_labels(m, target_inputs, th, reg)
    recs.append(_record(m, source, target_inputs, truth, labels, th, reg, r, "after_a"))

    sel = labels.selected
    tgt = M.LabeledBatch(target_inputs[sel], labels.labels[sel])
    sgd = cfg.selftrain_sgd or cfg.sgd
    m = train_epochs(m, (source, tgt), reg, sgd, cfg.epochs_per_round, rng)
    recs.append(_record(m, source, target_inputs, truth, labels, th, reg, r, "after_b"))
    return m, labels, recs


def run(cfg, source, target_inputs, truth=None, init_model=None):
    """Pretrain on source (unless ``init_model`` is given), then ``cfg.rounds`` rounds.

    ``truth`` only feeds the metric snapshots.
    """
    target_inputs = np.asarray(target_inputs, dtype=np.float64)
    K = source.labels.shape[1]
    m = init_model if init_model is not None else pretrain(cfg, source)
    hist = History()
    labels = PseudoLabels.none_selected(len(target_inputs), K)
    base = {"round": -1, "point": "baseline", "portion": None}
    L_CB, _ = objective(m, source, target_inputs, labels, Thresholds(np.ones(K), 1.0), NONE)
    base.update({"L_CB": L_CB, "L_CR": L_CB, "selected_counts": [0] * K, "n_selected": 0})
    if truth is not None:
        base["metrics"] = snapshot(M.forward(m, target_inputs)[1], truth)
    hist.records.append(base)
    rng = make_rng(cfg.seed, "selftrain")
    for r in range(cfg.rounds):
        hist.step_a_probs.append(M.forward(m, target_inputs)[1])
        m, labels, recs = run_round(m, source, target_inputs, cfg, r, labels, rng, truth)
        hist.records.extend(recs)
        hist.labels.append(labels)
    hist.model = m
    return hist


def with_reg(cfg, reg):
    return replace(cfg, reg=reg)
