"""Property checks for the solvers, gradients and equivalences.

Every check draws its instances from a fixed seed, compares the library path
against an independent route (numerical optimizer, finite differences, or a
direct re-implementation) and reports the worst instance it saw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import model as M
from .core import make_rng, one_hot, softmax, softmax_with_temperature
from .datagen import TWO_BLOBS_ROTATED, generate
from .pseudo import Thresholds, hard_pseudo_label, kkt_oracle, lrent_soft_label
from .regularizers import (
    RegularizerSpec,
    mr_grad_logits,
    mr_value,
    mrkld_closed_form_minimizer,
    mrkld_regularized_ce,
    verify_prop4,
    verify_prop5,
)
from .simplex import projected_gradient
from .trainer import TrainConfig, pretrain, run, train_epochs


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    n: int
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        s = f"{status}  {self.name:<18} worst={self.worst:.3e}  tol={self.tol:.1e}  n={self.n}"
        return s if self.passed or not self.detail else f"{s}\n      worst instance: {self.detail}"


def _result(name, errs, tol, details):
    errs = np.asarray(errs, dtype=np.float64)
    i = int(np.argmax(errs))
    return CheckResult(name, bool(np.all(errs < tol)), float(errs[i]), tol, errs.size, details(i))


def _random_prob(rng, K, scale=2.0):
    return softmax(rng.normal(0.0, scale, K))


def check_kkt(tol=1e-6, n=1000, seed=0):
    """Closed-form LRENT label versus the exponentiated-gradient oracle."""
    rng = make_rng(seed, "verify")
    Ks = (2, 3, 4, 8, 16)
    errs, inst = [], []
    for K in Ks:
        m = n // len(Ks)
        P = np.array([_random_prob(rng, K) for _ in range(m)])
        L = rng.uniform(0.05, 1.0, (m, K))
        A = rng.uniform(0.05, 5.0, m)
        th = Thresholds(L, 1.0)
        closed = np.array([lrent_soft_label(P[i], Thresholds(L[i], 1.0), A[i]) for i in range(m)])
        oracle = kkt_oracle(P, th, A)
        e = np.max(np.abs(closed - oracle), axis=1)
        errs.extend(e)
        inst.extend(f"K={K} p={P[i].round(4).tolist()} lam={L[i].round(4).tolist()} alpha={A[i]:.4f}" for i in range(m))
    return _result("kkt", errs, tol, lambda i: inst[i])


def _fd_rel_errors(analytic, numeric, abs_floor=1e-3, abs_tol=1e-7, rel_tol=1e-5):
    """Relative error, or absolute error scaled onto the relative tolerance for
    components below ``abs_floor``; a value below 1 passes."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    small = mag < abs_floor
    score = np.where(small, diff / abs_tol, diff / np.where(small, 1.0, mag) / rel_tol)
    return score


def check_gradients(tol=1e-5, n=1000, seed=0, h=1e-5):
    """Logit gradients of every model regularizer against central differences.

    Reports the worst relative error; components under 1e-3 are held to an
    absolute 1e-7 instead (scaled onto the same reporting axis).
    """
    rng = make_rng(seed, "verify")
    scores, inst = [], []
    for kind in ("mrl2", "mrent", "mrkld"):
        for _ in range(n):
            K = int(rng.choice([2, 3, 4, 8, 16]))
            z = rng.normal(0.0, 2.0, K)
            g = mr_grad_logits(kind, softmax(z))
            num = np.empty(K)
            for i in range(K):
                e = np.zeros(K)
                e[i] = h
                num[i] = (mr_value(kind, softmax(z + e)) - mr_value(kind, softmax(z - e))) / (2 * h)
            scores.append(_fd_rel_errors(g, num).max() * 1e-5)
            inst.append(f"{kind} z={z.round(4).tolist()}")
    return _result("gradients", scores, tol, lambda i: inst[i])


def _fd_params(model, f, h):
    out = {}
    for k, w in model.params.items():
        g = np.empty_like(w)
        for idx in np.ndindex(w.shape):
            plus = {kk: vv.copy() for kk, vv in model.params.items()}
            minus = {kk: vv.copy() for kk, vv in model.params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (f(model.replace_params(plus)) - f(model.replace_params(minus))) / (2 * h)
        out[k] = g
    return out


def _random_batches(rng, d, K, ns=6, nt=6, soft=False):
    src = M.LabeledBatch(rng.normal(size=(ns, d)), one_hot(rng.integers(0, K, ns), K))
    if soft:
        yt = softmax(rng.normal(size=(nt, K)))
    else:
        yt = one_hot(rng.integers(0, K, nt), K)
    yt[rng.random(nt) < 0.3] = 0.0
    return src, M.LabeledBatch(rng.normal(size=(nt, d)), yt)


def check_model_gradients(tol=1e-5, n=12, seed=0, h=1e-5):
    """Parameter gradients of the regularized loss versus central differences."""
    rng = make_rng(seed, "verify")
    scores, inst = [], []
    for i in range(n):
        for kind in ("none", "mrl2", "mrent", "mrkld"):
            for alpha in (0.025, 0.1, 0.25):
                arch = "linear" if i % 2 else "hidden"
                d, K = 3, int(rng.choice([2, 3, 4]))
                m = M.init(arch, d, K, hidden=5, seed=int(rng.integers(1 << 30)))
                src, tgt = _random_batches(rng, d, K, soft=bool(i % 3 == 0))
                reg = RegularizerSpec(mr=kind, alpha_mr=alpha if kind != "none" else 0.0)
                _, g = M.loss_and_grad(m, src, tgt, reg)
                num = _fd_params(m, lambda mm: M.loss_and_grad(mm, src, tgt, reg)[0], h)
                scores.append(max(_fd_rel_errors(g[k], num[k]).max() for k in g) * 1e-5)
                inst.append(f"{arch} K={K} {kind} alpha={alpha}")
    return _result("model_gradients", scores, tol, lambda i: inst[i])


def check_prop3(tol=1e-10, n=1000, seed=0):
    """Equal thresholds: LRENT label equals softmax with temperature of log p."""
    rng = make_rng(seed, "verify")
    errs, inst = [], []
    for _ in range(n):
        K = int(rng.choice([2, 3, 4, 8, 16]))
        p = _random_prob(rng, K)
        lam = rng.uniform(0.05, 1.0)
        alpha = rng.uniform(0.05, 5.0)
        a = lrent_soft_label(p, Thresholds(np.full(K, lam), 1.0), alpha)
        b = softmax_with_temperature(np.log(p), alpha)
        errs.append(np.max(np.abs(a - b)))
        inst.append(f"p={p.round(4).tolist()} lam={lam:.4f} alpha={alpha:.4f}")
    return _result("prop3", errs, tol, lambda i: inst[i])


def check_prop4(tol=1e-9, n=100, seed=0):
    """mrkld retraining loss equals (1 + alpha) times the smoothed-label loss."""
    rng = make_rng(seed, "verify")
    errs, inst = [], []
    for i in range(n):
        K = int(rng.choice([2, 3, 4, 8]))
        d = int(rng.integers(1, 5))
        arch = "linear" if i % 2 else "hidden"
        m = M.init(arch, d, K, hidden=6, seed=int(rng.integers(1 << 30)))
        # move away from the initialization so outputs are far from uniform
        m = m.replace_params({k: v * rng.uniform(0.5, 4.0) for k, v in m.params.items()})
        ns, nt = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        src = M.LabeledBatch(rng.normal(size=(ns, d)), one_hot(rng.integers(0, K, ns), K))
        tgt = M.LabeledBatch(rng.normal(size=(nt, d)), one_hot(rng.integers(0, K, nt), K))
        alpha = rng.uniform(0.0, 2.0)
        errs.append(verify_prop4(m, src, tgt, alpha))
        inst.append(f"{arch} K={K} d={d} alpha={alpha:.4f}")
    return _result("prop4", errs, tol, lambda i: inst[i])


def check_prop5(tol=1e-12, n=1000, seed=0):
    """Reverse-KL regularizer equals negative entropy plus log K, gradients equal."""
    rng = make_rng(seed, "verify")
    errs, inst = [], []
    for _ in range(n):
        K = int(rng.choice([2, 3, 4, 8, 16]))
        p = _random_prob(rng, K)
        gap, ggap = verify_prop5(p)
        errs.append(max(abs(gap - math.log(K)), float(np.max(np.abs(ggap)))))
        inst.append(f"p={p.round(4).tolist()}")
    return _result("prop5", errs, tol, lambda i: inst[i])


def check_eq4(tol=1e-12, n=1000, seed=0):
    """Hard solver cost is minimal among all one-hot candidates and the zero vector."""
    rng = make_rng(seed, "verify")
    errs, inst = [], []
    for _ in range(n):
        K = int(rng.choice([2, 3, 4, 8, 16]))
        p = _random_prob(rng, K)
        lam = rng.uniform(0.05, 1.0, K)
        y = hard_pseudo_label(p, Thresholds(lam, 1.0))
        cost = -np.sum(y * np.log(p / lam))
        candidates = [0.0] + [-math.log(p[k] / lam[k]) for k in range(K)]
        errs.append(max(0.0, cost - min(candidates)))
        inst.append(f"p={p.round(4).tolist()} lam={lam.round(4).tolist()}")
    return _result("eq4", errs, tol, lambda i: inst[i])


def check_monotonic(tol=1e-9, seeds=(0, 1), cfg=None):
    """Step a never raises the regularized objective, on full default runs."""
    cfg = cfg or TrainConfig()
    errs, inst = [], []
    for name in ("cbst", "mrkld", "mrent", "mrl2", "lrent", "mrkld+lrent"):
        for s in seeds:
            src, xt, _ = generate(TWO_BLOBS_ROTATED, s)
            h = run(replace(cfg, seed=s, reg=RegularizerSpec.from_name(name)), src, xt)
            for before, after in zip(h.points("before_a"), h.points("after_a")):
                errs.append(max(0.0, after["L_CR"] - before["L_CR"]))
                inst.append(f"{name} seed={s} round={after['round']}")
    return _result("monotonic", errs, tol, lambda i: inst[i])


def reference_cbst(cfg, source, target_inputs):
    """Direct class-balanced self-training with explicit loops.

    Returns per-round ``(labels, L_CB after step a)``. Retraining reuses the
    shared mini-batch loop so both paths see the same weights.
    """
    m = pretrain(cfg, source)
    rng = make_rng(cfg.seed, "selftrain")
    K = source.labels.shape[1]
    out = []
    for r in range(cfg.rounds):
        portion = cfg.p0 + r * cfg.dp
        _, P = M.forward(m, target_inputs)
        lam = []
        for k in range(K):
            confs = sorted((max(row) for row in P if int(np.argmax(row)) == k), reverse=True)
            lam.append(confs[math.ceil(portion * len(confs) - 1e-9) - 1] if confs else 1.0)
        Y = np.zeros_like(P)
        for t, row in enumerate(P):
            ratios = [row[k] / lam[k] for k in range(K)]
            k = max(range(K), key=lambda c: (ratios[c], -c))
            if row[k] >= lam[k]:
                Y[t, k] = 1.0
        zs, _ = M.forward(m, source.inputs)
        zt, _ = M.forward(m, target_inputs)
        loss = 0.0
        for z, y in zip(zs, source.labels):
            lse = math.log(sum(math.exp(v - max(z)) for v in z)) + max(z)
            loss -= sum(y[k] * (z[k] - lse) for k in range(K))
        for z, y in zip(zt, Y):
            lse = math.log(sum(math.exp(v - max(z)) for v in z)) + max(z)
            loss -= sum(y[k] * (z[k] - lse - math.log(lam[k])) for k in range(K) if y[k])
        out.append((Y, loss))
        sel = Y.sum(axis=1) > 0
        m = train_epochs(m, (source, M.LabeledBatch(target_inputs[sel], Y[sel])), RegularizerSpec(),
                         cfg.selftrain_sgd or cfg.sgd, cfg.epochs_per_round, rng)
    return out


def check_cbst_reduction(tol=1e-12, seeds=(0, 1, 2)):
    """CRST with zero weights reproduces direct class-balanced self-training."""
    errs, inst = [], []
    zero = RegularizerSpec(mr="mrkld", alpha_mr=0.0, lr="lrent", alpha_lr=0.0)
    for s in seeds:
        cfg = TrainConfig(seed=s, reg=zero)
        src, xt, _ = generate(TWO_BLOBS_ROTATED, s)
        h = run(cfg, src, xt)
        ref = reference_cbst(cfg, src, xt)
        for r, ((Y, loss), labels, rec) in enumerate(zip(ref, h.labels, h.points("after_a"))):
            if not np.array_equal(Y, labels.labels):
                errs.append(np.inf)
            else:
                errs.append(max(abs(rec["L_CB"] - loss), abs(rec["L_CR"] - loss)) / max(1.0, abs(loss)))
            inst.append(f"seed={s} round={r}")
    return _result("cbst_reduction", errs, tol, lambda i: inst[i])


def check_mrkld_minimizer(tol=1e-4):
    """Closed-form mrkld minimizer versus projected gradient on the simplex."""
    errs, inst = [], []
    for K in (2, 4, 8):
        for alpha in (0.1, 0.5, 1.0):
            for hot in (0, K - 1):
                y = one_hot(hot, K)
                closed = mrkld_closed_form_minimizer(y, alpha)
                w = y + alpha / K
                x = projected_gradient(
                    lambda p: mrkld_regularized_ce(p, y, alpha),
                    lambda p: -w / p,
                    np.full(K, 1.0 / K),
                )
                errs.append(np.max(np.abs(x - closed)))
                inst.append(f"K={K} alpha={alpha} hot={hot}")
    return _result("mrkld_minimizer", errs, tol, lambda i: inst[i])


def check_schedule(tol=1, seeds=(0, 1, 2), cfg=None):
    """Default portions 0.20/0.25/0.30 and ceil(p * N_k) selections per class."""
    cfg = cfg or TrainConfig()
    errs, inst = [], []
    for name in ("cbst", "mrkld"):
        for s in seeds:
            src, xt, _ = generate(TWO_BLOBS_ROTATED, s)
            h = run(replace(cfg, seed=s, reg=RegularizerSpec.from_name(name)), src, xt)
            for r, rec in enumerate(h.points("after_a")):
                want = [math.ceil(cfg.portion(r) * n - 1e-9) if n else 0 for n in rec["predicted_counts"]]
                bad = abs(rec["portion"] - cfg.portion(r)) > 1e-15 or want != rec["selected_counts"]
                errs.append(float(bad))
                inst.append(f"{name} seed={s} round={r} want={want} got={rec['selected_counts']}")
    return _result("schedule", errs, tol, lambda i: inst[i])


CHECKS = {
    "kkt": (check_kkt, 1e-6),
    "gradients": (check_gradients, 1e-5),
    "model_gradients": (check_model_gradients, 1e-5),
    "prop3": (check_prop3, 1e-10),
    "prop4": (check_prop4, 1e-9),
    "prop5": (check_prop5, 1e-12),
    "eq4": (check_eq4, 1e-12),
    "monotonic": (check_monotonic, 1e-9),
    "cbst_reduction": (check_cbst_reduction, 1e-12),
    "mrkld_minimizer": (check_mrkld_minimizer, 1e-4),
    "schedule": (check_schedule, 1),
}


def run_checks(only=None, tolerances=None):
    tolerances = tolerances or {}
    names = list(CHECKS) if not only else list(only)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
        fn, tol = CHECKS[name]
        results.append(fn(tol=tolerances.get(name, tol)))
    return results
