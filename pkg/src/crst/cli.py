"""Command line entry point: ``crst run | sweep | verify | curves``.

Experiments are described by a YAML file; every key is optional and the
defaults are listed in :data:`DEFAULT_CONFIG`. Output goes to
``<out>/<name>/seed_<s>/`` (``--out``, else the config's ``output``, else
``$CRST_OUTPUT_ROOT``, else ``./runs``).
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import model as M
from .core import one_hot
from .datagen import DomainSpec, generate, load_csv, split_labeled
from .metrics import confidence_histogram, write_histogram_csv
from .pseudo import Thresholds, dump_pseudo_labels, lrent_soft_label
from .regularizers import RegularizerSpec, binary_loss_curve, mrkld_closed_form_minimizer
from .trainer import TrainConfig, run
from .verify import CHECKS, run_checks

ENV_OUTPUT_ROOT = "CRST_OUTPUT_ROOT"
INCOMPLETE_MARKER = "INCOMPLETE"

DEFAULT_CONFIG = {
    "name": "experiment",
    "seeds": [0],
    "output": None,
    # either the synthetic generator (keys of DomainSpec) or csv paths
    "data": {"benchmark": "two-blobs-rotated"},
    "train": {
        "rounds": 3,            # self-training rounds
        "epochs_per_round": 2,  # retraining epochs per round
        "p0": 0.20,             # initial selected portion
        "dp": 0.05,             # portion increment per round
        "pretrain_epochs": 30,
        "arch": "hidden",
        "hidden": 16,
        "sgd": {"lr": 0.05, "momentum": 0.9, "weight_decay": 5e-4, "batch_size": 32},
        "selftrain_sgd": None,  # None: reuse sgd
    },
    # name: cbst | mrl2 | mrent | mrkld | lrent | mrkld+lrent; weights default
    # to 0.025 / 0.1 / 0.1 / 0.25 (mrl2 / mrent / mrkld / lrent)
    "reg": {"name": "mrkld", "alpha": None, "alpha_lr": None},
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k != "data":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        cfg = cls(_merge(DEFAULT_CONFIG, data), path.parent)
        cfg.validate()
        return cfg

    @classmethod
    def default(cls):
        return cls(copy.deepcopy(DEFAULT_CONFIG), Path("."))

    def validate(self):
        data = self.raw["data"]
        sources = ("benchmark" in data) + ("source_csv" in data)
        if sources != 1:
            raise ConfigError("data needs exactly one of 'benchmark' or 'source_csv'")
        if not self.raw["seeds"]:
            raise ConfigError("seeds must be nonempty")
        self.reg()
        self.train_config(0)

    @property
    def name(self):
        return str(self.raw["name"])

    def reg(self):
        r = self.raw["reg"]
        try:
            return RegularizerSpec.from_name(r.get("name", "cbst"), r.get("alpha"), r.get("alpha_lr"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed):
        t = self.raw["train"]
        try:
            st = t.get("selftrain_sgd")
            return TrainConfig(
                rounds=int(t["rounds"]),
                epochs_per_round=int(t["epochs_per_round"]),
                p0=float(t["p0"]),
                dp=float(t["dp"]),
                reg=self.reg(),
                sgd=M.SgdConfig(**t["sgd"]),
                selftrain_sgd=M.SgdConfig(**st) if st else None,
                pretrain_epochs=int(t["pretrain_epochs"]),
                arch=t["arch"],
                hidden=int(t["hidden"]),
                seed=int(seed),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train section: {exc}") from None

    def load_data(self, seed):
        """``(source, target_inputs, target_truth or None)`` for one seed."""
        data = dict(self.raw["data"])
        if "benchmark" in data:
            bench = data.pop("benchmark")
            if bench != "two-blobs-rotated":
                raise ConfigError(f"unknown benchmark {bench!r}")
            if "rotation_deg" in data:
                data["rotation"] = float(np.deg2rad(data.pop("rotation_deg")))
            for key in ("translation", "means"):
                if data.get(key) is not None:
                    data[key] = tuple(tuple(v) if isinstance(v, list) else v for v in data[key])
            try:
                spec = DomainSpec(**data)
            except TypeError as exc:
                raise ConfigError(f"bad data section: {exc}") from None
            return generate(spec, seed)
        K = int(data["n_classes"])
        Xs, ys = load_csv(self.base_dir / data["source_csv"], K)
        source, _ = split_labeled(Xs, ys, K)
        Xt, yt = load_csv(self.base_dir / data["target_csv"], K)
        truth = yt if np.all(yt >= 0) else None
        return source, Xt, truth

    def resolved(self):
        """Raw config with regularizer weights filled in, as written to snapshots."""
        raw = copy.deepcopy(self.raw)
        reg = self.reg()
        raw["reg"]["alpha"] = reg.alpha_mr if reg.mr != "none" else (reg.alpha_lr if reg.lr != "none" else None)
        raw["reg"]["alpha_lr"] = reg.alpha_lr if reg.lr != "none" else None
        return raw

    def with_override(self, axis, value):
        raw = copy.deepcopy(self.raw)
        if axis == "alpha":
            # weights the model regularizer if one is active, else the label one
            raw["reg"]["alpha"] = float(value)
        elif axis == "p0":
            if isinstance(value, str) and "/" in value:
                p0, dp = value.split("/")
                raw["train"]["p0"], raw["train"]["dp"] = float(p0), float(dp)
            else:
                raw["train"]["p0"] = float(value)
        elif axis == "dp":
            raw["train"]["dp"] = float(value)
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        out = ExperimentConfig(raw, self.base_dir)
        out.validate()
        return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_seed(cfg, seed, seed_dir):
    """One seed of one experiment, written into ``seed_dir``."""
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    marker = seed_dir / INCOMPLETE_MARKER
    marker.write_text("run started; remove after a successful finish\n", encoding="utf-8")

    with open(seed_dir / "config.yaml", "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump({**cfg.resolved(), "seeds": [seed]}, fh, sort_keys=True)
    tc = cfg.train_config(seed)
    source, xt, truth = cfg.load_data(seed)
    hist = run(tc, source, xt, truth)

    hist.to_jsonl(seed_dir / "history.jsonl")
    hist.to_summary_csv(seed_dir / "summary.csv")
    for r, (labels, probs) in enumerate(zip(hist.labels, hist.step_a_probs)):
        dump_pseudo_labels(seed_dir / f"pseudo_labels_round{r}.csv", labels, probs)
    if truth is not None:
        _write_json(seed_dir / "metrics_baseline.json", hist.records[0]["metrics"])
        for rec in hist.points("after_b"):
            _write_json(seed_dir / f"metrics_round{rec['round']}.json", rec["metrics"])
    _, probs = M.forward(hist.model, xt)
    write_histogram_csv(seed_dir / "histogram_final.csv", *confidence_histogram(probs, 20))
    M.save_checkpoint(hist.model, seed_dir / "model_final.txt")
    marker.unlink()
    return hist


def _outcome(hist):
    base = hist.records[0].get("metrics") or {}
    final = hist.final.get("metrics") or {}
    return {
        "baseline_accuracy": base.get("mean_accuracy"),
        "final_accuracy": final.get("mean_accuracy"),
        "mean_ratio": (final.get("confidence") or {}).get("mean_ratio"),
    }


def _run_job(args):
    raw, base_dir, seed, seed_dir = args
    hist = run_seed(ExperimentConfig(raw, Path(base_dir)), seed, seed_dir)
    return _outcome(hist)


def _execute(jobs, n_workers):
    if n_workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_job, jobs))


def _out_root(args, cfg):
    if args.out:
        return Path(args.out)
    if cfg.raw.get("output"):
        return cfg.base_dir / cfg.raw["output"]
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))


def _seeds(args, cfg):
    if args.seeds:
        return [int(s) for s in args.seeds.split(",") if s.strip()]
    return [int(s) for s in cfg.raw["seeds"]]


def _load(args):
    return ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default()


def cmd_run(args):
    cfg = _load(args)
    root = _out_root(args, cfg) / cfg.name
    jobs = [(cfg.raw, str(cfg.base_dir), s, str(root / f"seed_{s}")) for s in _seeds(args, cfg)]
    for seed, res in zip(_seeds(args, cfg), _execute(jobs, args.jobs)):
        print(f"seed {seed}: " + ", ".join(f"{k}={_num(v)}" for k, v in res.items()))
    return 0


def _num(v):
    return "n/a" if v is None else f"{v:.4f}"


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return ""
    return f"{np.mean(vals):.6f}±{np.std(vals):.6f}"


def cmd_sweep(args):
    cfg = _load(args)
    seeds = _seeds(args, cfg)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no sweep values given")
    root = _out_root(args, cfg) / cfg.name / f"sweep_{args.axis}"
    jobs, keys = [], []
    for v in values:
        sub = cfg.with_override(args.axis, v)
        for s in seeds:
            jobs.append((sub.raw, str(sub.base_dir), s, str(root / f"{args.axis}={v}" / f"seed_{s}")))
            keys.append((v, s))
    results = _execute(jobs, args.jobs)
    cols = ["value", "seed", "baseline_accuracy", "final_accuracy", "mean_ratio"]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for (v, s), res in zip(keys, results):
            w.writerow([v, s] + ["" if res[c] is None else repr(res[c]) for c in cols[2:]])
        for v in values:
            group = [res for (vv, _), res in zip(keys, results) if vv == v]
            w.writerow([v, "mean±std"] + [_mean_std([g[c] for g in group]) for c in cols[2:]])
            print(f"{args.axis}={v}: final_accuracy {_mean_std([g['final_accuracy'] for g in group])}")
    return 0


def cmd_verify(args):
    tols = {}
    for item in args.tol or []:
        name, _, val = item.partition("=")
        if name not in CHECKS:
            raise ConfigError(f"unknown check {name!r}")
        tols[name] = float(val)
    only = None
    if args.only:
        only = [n.strip() for part in args.only for n in part.split(",") if n.strip()]
        for n in only:
            if n not in CHECKS:
                raise ConfigError(f"unknown check {n!r}; choose from {', '.join(CHECKS)}")
    results = run_checks(only, tols)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


def _alphas(s):
    return [float(a) for a in s.split(",") if a.strip()]


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


LRENT_EXAMPLE_P = np.array([0.2, 0.1, 0.55, 0.15])


def lrent_minimizer_rows(alphas, p=LRENT_EXAMPLE_P):
    """Soft-label minimizers over alpha for equal thresholds (alpha = 0 is one-hot)."""
    th = Thresholds(np.ones(p.size), 1.0)
    rows = []
    for a in alphas:
        y = one_hot(int(np.argmax(p)), p.size) if a == 0 else lrent_soft_label(p, th, a)
        rows.append([a, *y])
    return rows


def mrkld_minimizer_rows(alphas, K=4, hot=1):
    y = one_hot(hot, K)
    return [[a, *mrkld_closed_form_minimizer(y, a)] for a in alphas]


def cmd_curves(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = ["mrl2", "mrent", "mrkld", "lrent"] if args.kind == "all" else [args.kind]
    alphas = _alphas(args.alphas)
    grid = np.linspace(0.001, 0.999, 999)
    for kind in kinds:
        xname = "y" if kind == "lrent" else "p"
        for a in alphas:
            curve = binary_loss_curve(kind, a, grid)
            _write_rows(out / f"loss_curve_{kind}_alpha{a:g}.csv", [xname, "loss"], curve)
    K = LRENT_EXAMPLE_P.size
    _write_rows(out / "minimizers_lrent.csv", ["alpha"] + [f"y{k}" for k in range(K)],
                lrent_minimizer_rows(alphas))
    _write_rows(out / "minimizers_mrkld.csv", ["alpha"] + [f"p{k}" for k in range(K)],
                mrkld_minimizer_rows(alphas))
    print(f"wrote curves for {', '.join(kinds)} at alpha in {alphas} to {out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="crst", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--out", help="output root directory")
        p.add_argument("--seeds", help="comma-separated seeds, overrides the config")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("run", help="run an experiment for each seed")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one hyperparameter")
    common(p)
    p.add_argument("--axis", required=True, choices=["alpha", "p0", "dp"])
    p.add_argument("--values", required=True,
                   help="comma-separated values; p0 also accepts 'p0/dp' pairs such as 0.2/0.05")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the property checks")
    p.add_argument("--only", action="append", help=f"check name(s): {', '.join(CHECKS)}")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("curves", help="write regularized loss curves and minimizer tables")
    p.add_argument("--kind", default="all", choices=["all", "mrl2", "mrent", "mrkld", "lrent"])
    p.add_argument("--alphas", default="0,0.1,0.5,1,2,5")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
